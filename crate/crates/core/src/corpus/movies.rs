use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MovieId;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MovieEntity {
    pub id: MovieId,
    pub title: String,
    pub year: Option<i32>,
}

/// The movie vocabulary. Movies are kept sorted by id; a movie's position in
/// that order is its index in rating vectors and movie distributions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MovieDb {
    movies: Vec<MovieEntity>,
    index: HashMap<MovieId, usize>,
}

impl MovieDb {
    pub fn new(mut movies: Vec<MovieEntity>) -> Result<Self> {
        movies.sort_by_key(|m| m.id);
        let mut index = HashMap::with_capacity(movies.len());
        for (i, m) in movies.iter().enumerate() {
            if m.title.trim().is_empty() {
                return Err(Error::InvalidArgument(format!("movie {} has an empty title", m.id)));
            }
            if index.insert(m.id, i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate movie id {}", m.id)));
            }
        }
        Ok(MovieDb { movies, index })
    }

    /// Reads `id<TAB>title<TAB>year` lines; the year may be empty and `#` starts a comment line.
    pub fn load_tsv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tsv(&text, path)
    }

    pub fn parse_tsv(text: &str, path: &Path) -> Result<Self> {
        let mut movies = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg,
            };
            let mut cols = line.split('\t');
            let id = cols
                .next()
                .and_then(|c| c.trim().parse::<MovieId>().ok())
                .ok_or_else(|| err("expected a numeric movie id".into()))?;
            let title = cols
                .next()
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .ok_or_else(|| err("missing title".into()))?
                .to_string();
            let year = match cols.next().map(str::trim) {
                None | Some("") => None,
                Some(y) => Some(y.parse().map_err(|_| err(format!("bad year `{y}`")))?),
            };
            movies.push(MovieEntity { id, title, year });
        }
        Self::new(movies).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: e.to_string(),
        })
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for m in &self.movies {
            let year = m.year.map(|y| y.to_string()).unwrap_or_default();
            out.push_str(&format!("{}\t{}\t{}\n", m.id, m.title, year));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.movies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.movies.is_empty()
    }

    pub fn get(&self, id: MovieId) -> Option<&MovieEntity> {
        self.index.get(&id).map(|&i| &self.movies[i])
    }

    pub fn index_of(&self, id: MovieId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn by_index(&self, i: usize) -> &MovieEntity {
        &self.movies[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &MovieEntity> {
        self.movies.iter()
    }

    /// Case-insensitive title lookup: prefix matches first, then substring
    /// matches, each group in ascending id order.
    pub fn search(&self, query: &str, limit: usize) -> Vec<&MovieEntity> {
        let q = query.to_lowercase();
        let (mut prefix, mut substring) = (Vec::new(), Vec::new());
        for m in &self.movies {
            let t = m.title.to_lowercase();
            if t.starts_with(&q) {
                prefix.push(m);
            } else if t.contains(&q) {
                substring.push(m);
            }
        }
        prefix.into_iter().chain(substring).take(limit).collect()
    }
}
