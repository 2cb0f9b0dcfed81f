//! MovieLens-backed environment: ml-100k parsing, per-user bandit tasks,
//! per-user source pretraining and demographic grouping.
//!
//! Movie contexts are 18-dimensional genre indicators scaled to unit norm
//! (each of the `S` active genres gets `1/√S`); the legacy "unknown" flag is
//! dropped. Rewards are the user's fixed ratings, so per-user runs are
//! deterministic and the regret baseline is the user's maximum rating.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::linmodel::ContextVector;
use crate::policies::{Agent, AgentConfig, ClassicAgent};
use crate::transfer::SourceModel;

/// Number of genre dimensions after dropping the "unknown" flag.
pub const N_GENRES: usize = 18;

/// Declared reward interval: ml-100k ratings are integers from 1 to 5.
pub const MOVIELENS_REWARD_RANGE: (f64, f64) = (1.0, 5.0);

/// Minimum number of distinct rated movies for a user to be retained.
const MIN_RATED_MOVIES: usize = 20;

/// Age-band lower edges used for demographic grouping.
const AGE_BANDS: [u32; 7] = [1, 18, 25, 35, 45, 50, 56];

/// The lower edge of the band an age falls into.
pub fn age_band(age: u32) -> u32 {
    AGE_BANDS
        .iter()
        .rev()
        .find(|&&b| age >= b)
        .copied()
        .unwrap_or(AGE_BANDS[0])
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserInfo {
    pub id: u32,
    pub age: u32,
    pub gender: String,
    pub occupation: String,
}

impl UserInfo {
    /// The (age-band, gender, occupation) key this user groups under.
    pub fn group_key(&self) -> (u32, String, String) {
        (age_band(self.age), self.gender.clone(), self.occupation.clone())
    }
}

/// Parsed ml-100k dataset restricted to users with enough ratings.
#[derive(Debug, Clone)]
pub struct MovieLensUniverse {
    users: BTreeMap<u32, UserInfo>,
    movies: BTreeMap<u32, ContextVector>,
    /// user id → movie id → rating. Only retained users appear.
    ratings: BTreeMap<u32, BTreeMap<u32, f64>>,
    groups: BTreeMap<(u32, String, String), Vec<u32>>,
    skipped_ratings: usize,
}

impl MovieLensUniverse {
    pub fn users(&self) -> &BTreeMap<u32, UserInfo> {
        &self.users
    }

    pub fn movie_context(&self, movie: u32) -> Option<&ContextVector> {
        self.movies.get(&movie)
    }

    pub fn n_movies(&self) -> usize {
        self.movies.len()
    }

    /// Ratings of a retained user (movie id → rating).
    pub fn user_ratings(&self, user: u32) -> Option<&BTreeMap<u32, f64>> {
        self.ratings.get(&user)
    }

    pub fn groups(&self) -> &BTreeMap<(u32, String, String), Vec<u32>> {
        &self.groups
    }

    /// Same-group peers of a user, excluding the user itself.
    pub fn group_peers(&self, user: u32) -> Result<Vec<u32>> {
        let info = self
            .users
            .get(&user)
            .ok_or_else(|| Error::usage(format!("unknown or dropped user {user}")))?;
        let members = self
            .groups
            .get(&info.group_key())
            .expect("every retained user belongs to its own group");
        Ok(members.iter().copied().filter(|&u| u != user).collect())
    }

    /// How many rating lines referenced unknown users or movies and were skipped.
    pub fn skipped_ratings(&self) -> usize {
        self.skipped_ratings
    }
}

fn read_file(dir: &Path, name: &str) -> Result<(String, String)> {
    let path = dir.join(name);
    let display = path.display().to_string();
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::data(&display, 0, format!("cannot read file: {e}")))?;
    Ok((text, display))
}

/// Parses an ml-100k-format directory (`u.item`, `u.user`, `u.data`).
///
/// Users rating fewer than 20 distinct movies are dropped; ratings referencing
/// unknown users or movies are skipped and counted. Malformed lines are
/// reported with their file and line number.
pub fn load_movielens(data_dir: impl AsRef<Path>) -> Result<MovieLensUniverse> {
    let dir = data_dir.as_ref();

    // u.item: movie_id|title|release|video_release|url|19 genre flags.
    let (text, display) = read_file(dir, "u.item")?;
    let mut movies = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('|').collect();
        if fields.len() < 24 {
            return Err(Error::data(
                &display,
                line_no,
                format!("expected at least 24 pipe-separated fields, got {}", fields.len()),
            ));
        }
        let id: u32 = fields[0].parse().map_err(|_| {
            Error::data(&display, line_no, format!("invalid movie id {:?}", fields[0]))
        })?;
        // Fields 5..24 are 19 binary genre flags; field 5 is the legacy
        // "unknown" flag and is dropped, leaving the 18 genre dimensions.
        let mut flags = [false; N_GENRES];
        for (g, tok) in fields[6..24].iter().enumerate() {
            flags[g] = match tok.trim() {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::data(
                        &display,
                        line_no,
                        format!("invalid genre flag {other:?}"),
                    ))
                }
            };
        }
        let active = flags.iter().filter(|&&f| f).count();
        let mut values = vec![0.0; N_GENRES];
        if active > 0 {
            let v = 1.0 / (active as f64).sqrt();
            for (slot, &on) in values.iter_mut().zip(flags.iter()) {
                if on {
                    *slot = v;
                }
            }
        }
        movies.insert(id, ContextVector::new(values)?);
    }

    // u.user: user_id|age|gender|occupation|zip.
    let (text, display) = read_file(dir, "u.user")?;
    let mut users = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('|').collect();
        if fields.len() < 4 {
            return Err(Error::data(
                &display,
                line_no,
                format!("expected at least 4 pipe-separated fields, got {}", fields.len()),
            ));
        }
        let id: u32 = fields[0].parse().map_err(|_| {
            Error::data(&display, line_no, format!("invalid user id {:?}", fields[0]))
        })?;
        let age: u32 = fields[1].parse().map_err(|_| {
            Error::data(&display, line_no, format!("invalid age {:?}", fields[1]))
        })?;
        users.insert(
            id,
            UserInfo {
                id,
                age,
                gender: fields[2].trim().to_string(),
                occupation: fields[3].trim().to_string(),
            },
        );
    }

    // u.data: user \t movie \t rating \t timestamp.
    let (text, display) = read_file(dir, "u.data")?;
    let mut ratings: BTreeMap<u32, BTreeMap<u32, f64>> = BTreeMap::new();
    let mut skipped_ratings = 0usize;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 {
            return Err(Error::data(
                &display,
                line_no,
                format!("expected at least 3 tab-separated fields, got {}", fields.len()),
            ));
        }
        let user: u32 = fields[0].parse().map_err(|_| {
            Error::data(&display, line_no, format!("invalid user id {:?}", fields[0]))
        })?;
        let movie: u32 = fields[1].parse().map_err(|_| {
            Error::data(&display, line_no, format!("invalid movie id {:?}", fields[1]))
        })?;
        let rating: f64 = fields[2].parse().map_err(|_| {
            Error::data(&display, line_no, format!("invalid rating {:?}", fields[2]))
        })?;
        if !users.contains_key(&user) || !movies.contains_key(&movie) {
            skipped_ratings += 1;
            continue;
        }
        ratings.entry(user).or_default().insert(movie, rating);
    }

    // Retain only users rating at least MIN_RATED_MOVIES distinct movies.
    ratings.retain(|_, per_user| per_user.len() >= MIN_RATED_MOVIES);
    users.retain(|id, _| ratings.contains_key(id));

    let mut groups: BTreeMap<(u32, String, String), Vec<u32>> = BTreeMap::new();
    for info in users.values() {
        groups.entry(info.group_key()).or_default().push(info.id);
    }

    Ok(MovieLensUniverse {
        users,
        movies,
        ratings,
        groups,
        skipped_ratings,
    })
}

/// One user's bandit task: arms are their rated movies, rewards the ratings.
#[derive(Debug, Clone)]
pub struct MovieLensUserEnv {
    user: u32,
    movie_ids: Vec<u32>,
    arms: Vec<ContextVector>,
    rewards: Vec<f64>,
    optimal: f64,
}

impl MovieLensUserEnv {
    pub fn new(universe: &MovieLensUniverse, user: u32) -> Result<Self> {
        let per_user = universe
            .user_ratings(user)
            .ok_or_else(|| Error::usage(format!("unknown or dropped user {user}")))?;
        let mut movie_ids = Vec::with_capacity(per_user.len());
        let mut arms = Vec::with_capacity(per_user.len());
        let mut rewards = Vec::with_capacity(per_user.len());
        for (&movie, &rating) in per_user {
            movie_ids.push(movie);
            arms.push(
                universe
                    .movie_context(movie)
                    .expect("rated movies exist in the universe")
                    .clone(),
            );
            rewards.push(rating);
        }
        let optimal = rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(MovieLensUserEnv {
            user,
            movie_ids,
            arms,
            rewards,
            optimal,
        })
    }

    pub fn user(&self) -> u32 {
        self.user
    }

    /// Movie id behind each arm index.
    pub fn movie_ids(&self) -> &[u32] {
        &self.movie_ids
    }
}

impl Environment for MovieLensUserEnv {
    fn arms(&self) -> &[ContextVector] {
        &self.arms
    }

    fn mean_reward(&self, arm: usize) -> f64 {
        self.rewards[arm]
    }

    fn draw_reward(&self, arm: usize, _rng: &mut ChaCha8Rng) -> f64 {
        self.rewards[arm]
    }

    fn optimal_mean(&self) -> f64 {
        self.optimal
    }

    fn reward_range(&self) -> (f64, f64) {
        MOVIELENS_REWARD_RANGE
    }

    fn theta_star(&self) -> Option<&DVector<f64>> {
        None
    }
}

/// Default pretraining horizon per user.
pub const DEFAULT_PRETRAIN_ROUNDS: u64 = 1000;

/// Pretrains one user's source model: classic LinUCB (λ=1, practical bound)
/// over the user's rated movies for `rounds` steps; the final estimate is
/// rescaled into the unit ball if needed.
///
/// Rewards are fixed ratings and the policy is deterministic, so the result
/// does not depend on `seed`; the parameter exists to pin the contract that a
/// given seed yields a given model.
pub fn pretrain_sources(
    universe: &MovieLensUniverse,
    user: u32,
    rounds: u64,
    seed: u64,
) -> Result<SourceModel> {
    let env = MovieLensUserEnv::new(universe, user)?;
    let cfg = AgentConfig::default();
    let mut agent = ClassicAgent::new(cfg, N_GENRES)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..rounds {
        let choice = agent.select(env.arms(), &mut rng)?;
        let reward = env.mean_reward(choice.arm_id);
        agent.observe(env.arms(), &choice, reward)?;
    }
    let mut theta = agent.state().theta_t().clone();
    let norm = theta.norm();
    if norm > 1.0 {
        theta /= norm;
    }
    SourceModel::new(theta)
}

/// Pretrains all same-group peers of `target_user` as source models, in
/// ascending user-id order. A singleton group yields an empty list.
pub fn group_sources(
    universe: &MovieLensUniverse,
    target_user: u32,
    rounds: u64,
) -> Result<Vec<SourceModel>> {
    let peers = universe.group_peers(target_user)?;
    peers
        .into_iter()
        .map(|u| pretrain_sources(universe, u, rounds, 0))
        .collect()
}

/// Writes a small deterministic ml-100k-format dataset for tests and demos.
///
/// Contents: 40 movies with 1–3 genres each; users 1–4 form one cohort
/// (female lawyers aged 35–44) sharing a genre preference, user 5 is an
/// unrelated cohort with reversed preferences, and user 6 rates too few movies
/// to be retained. Every retained user rates 35 distinct movies with integer
/// ratings derived from their preference vector.
pub fn write_demo_dataset(dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;

    let genres_of = |m: u32| -> Vec<usize> {
        let mut gs = vec![(m * 7 % 18) as usize];
        if m % 3 >= 1 {
            gs.push(((m * 5 + 3) % 18) as usize);
        }
        if m % 3 == 2 {
            gs.push(((m * 11 + 6) % 18) as usize);
        }
        gs.sort_unstable();
        gs.dedup();
        gs
    };

    let mut items = String::new();
    for m in 1..=40u32 {
        let gs = genres_of(m);
        let mut flags = ["0"; 19];
        for &g in &gs {
            flags[g + 1] = "1";
        }
        items.push_str(&format!(
            "{m}|Film {m} (1994)|01-Jan-1994||http://example.com/{m}|{}\n",
            flags.join("|")
        ));
    }
    std::fs::write(dir.join("u.item"), items)?;

    let users = [
        (1u32, 35u32, "F", "lawyer"),
        (2, 38, "F", "lawyer"),
        (3, 40, "F", "lawyer"),
        (4, 44, "F", "lawyer"),
        (5, 22, "M", "programmer"),
        (6, 30, "F", "artist"),
    ];
    let mut user_lines = String::new();
    for (id, age, gender, occupation) in users {
        user_lines.push_str(&format!("{id}|{age}|{gender}|{occupation}|00000\n"));
    }
    std::fs::write(dir.join("u.user"), user_lines)?;

    // Cohort preference over genres (0..4), reversed for the outsider.
    let pref = |u: u32, g: usize| -> f64 {
        let base = (g * 3 % 5) as f64;
        if u == 5 {
            4.0 - base
        } else {
            base
        }
    };
    let rating = |u: u32, m: u32| -> u32 {
        let gs = genres_of(m);
        let s = (gs.len() as f64).sqrt();
        let score: f64 = gs.iter().map(|&g| pref(u, g) / s).sum();
        (1.0 + score).round().clamp(1.0, 5.0) as u32
    };

    let mut data = String::new();
    for u in 1..=5u32 {
        for m in 1..=40u32 {
            if (m + u) % 8 == 0 {
                continue;
            }
            data.push_str(&format!("{u}\t{m}\t{}\t878887116\n", rating(u, m)));
        }
    }
    for m in 1..=10u32 {
        data.push_str(&format!("6\t{m}\t{}\t878887116\n", rating(6, m)));
    }
    std::fs::write(dir.join("u.data"), data)?;
    Ok(())
}
