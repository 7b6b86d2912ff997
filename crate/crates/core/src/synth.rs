//! Synthetic corpora in the ML-1M file format, for tests and benchmarks.
//!
//! Ratings come from a hidden user-taste x item-genre affinity plus noise, so
//! the labels are learnable but not trivially separable.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Gender, RawInteraction, RawItem, RawUser, AGE_CODES, MAX_OCCUPATION};

pub const GENRES: [&str; 18] = [
    "Action",
    "Adventure",
    "Animation",
    "Children's",
    "Comedy",
    "Crime",
    "Documentary",
    "Drama",
    "Fantasy",
    "Film-Noir",
    "Horror",
    "Musical",
    "Mystery",
    "Romance",
    "Sci-Fi",
    "Thriller",
    "War",
    "Western",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SynthConfig {
    pub users: usize,
    pub items: usize,
    pub ratings_per_user: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            users: 200,
            items: 150,
            ratings_per_user: 30,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub users: Vec<RawUser>,
    pub items: Vec<RawItem>,
    pub ratings: Vec<RawInteraction>,
}

impl SynthCorpus {
    pub fn generate(cfg: &SynthConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let zips = ["48067", "55117", "02460", "60614", "95370", "10012", "70072", "94110"];
        let users: Vec<RawUser> = (1..=cfg.users as u32)
            .map(|user_id| RawUser {
                user_id,
                gender: if rng.random_bool(0.5) { Gender::F } else { Gender::M },
                age_code: AGE_CODES[rng.random_range(0..AGE_CODES.len())],
                occupation_code: rng.random_range(0..=MAX_OCCUPATION),
                zip: zips[rng.random_range(0..zips.len())].to_string(),
            })
            .collect();
        let items: Vec<RawItem> = (1..=cfg.items as u32)
            .map(|item_id| {
                let n = rng.random_range(1..=3);
                let mut genres: Vec<String> = Vec::new();
                while genres.len() < n {
                    let g = GENRES[rng.random_range(0..GENRES.len())].to_string();
                    if !genres.contains(&g) {
                        genres.push(g);
                    }
                }
                genres.sort_by_key(|g| GENRES.iter().position(|x| x == g));
                RawItem {
                    item_id,
                    title: format!("Synthetic Picture {item_id}"),
                    release_year: Some(rng.random_range(1930..=2000)),
                    genres,
                }
            })
            .collect();
        let taste: Vec<Vec<f64>> = users
            .iter()
            .map(|_| GENRES.iter().map(|_| rng.random_range(-1.5..1.5)).collect())
            .collect();
        let quality: Vec<f64> = items.iter().map(|_| rng.random_range(-0.8..0.8)).collect();
        let mut ratings = Vec::new();
        for (u, user) in users.iter().enumerate() {
            let count = cfg.ratings_per_user.min(items.len());
            let mut seen = std::collections::HashSet::new();
            while seen.len() < count {
                let i = rng.random_range(0..items.len());
                if !seen.insert(i) {
                    continue;
                }
                let affinity: f64 = items[i]
                    .genres
                    .iter()
                    .map(|g| taste[u][GENRES.iter().position(|x| x == g).unwrap()])
                    .sum::<f64>()
                    / items[i].genres.len() as f64;
                let noise: f64 = rng.random_range(-1.0..1.0);
                let score = 3.4 + 1.4 * affinity + quality[i] + noise;
                ratings.push(RawInteraction {
                    user_id: user.user_id,
                    item_id: items[i].item_id,
                    rating: score.round().clamp(1.0, 5.0) as u8,
                    // 2000-05-01 .. 2003-02-28
                    timestamp: rng.random_range(957_139_200..1_046_390_400),
                });
            }
        }
        SynthCorpus { users, items, ratings }
    }

    /// Writes `users.dat`, `movies.dat` and `ratings.dat` into `dir`.
    pub fn write_ml1m(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let join = |lines: Vec<String>| lines.join("\n") + "\n";
        std::fs::write(dir.join("users.dat"), join(self.users.iter().map(RawUser::to_ml1m_line).collect()))?;
        std::fs::write(dir.join("movies.dat"), join(self.items.iter().map(RawItem::to_ml1m_line).collect()))?;
        std::fs::write(
            dir.join("ratings.dat"),
            join(self.ratings.iter().map(RawInteraction::to_ml1m_line).collect()),
        )?;
        Ok(())
    }
}
