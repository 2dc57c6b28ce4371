//! Response data: the validated N x Q matrix and its long-format CSV form.
//!
//! External files carry one row per response, `respondent,question,category`,
//! with string IDs mapped to dense indices in order of first appearance. A cell
//! that is empty or holds `NA` is treated as missing. An optional JSON sidecar
//! pins the index order, the category counts, and per-question anchor
//! (correct-answer) categories.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Validated polytomous responses. Categories are 1-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseMatrix {
    n_respondents: usize,
    n_questions: usize,
    categories: Vec<usize>,
    // row-major, 0 where missing
    responses: Vec<u16>,
    observed: Vec<bool>,
    respondent_ids: Vec<String>,
    question_ids: Vec<String>,
    anchors: Vec<Option<usize>>,
}

impl ResponseMatrix {
    /// Validate a dense table of `Some(category)` / `None` cells.
    ///
    /// IDs default to `r1..rN` and `q1..qQ`.
    pub fn from_table(raw: &[Vec<Option<i64>>], categories: &[usize]) -> Result<Self> {
        let n = raw.len();
        let q = categories.len();
        if n == 0 || q == 0 {
            return Err(Error::InvalidDimensions(format!(
                "table must have at least one row and one column (got {n}x{q})"
            )));
        }
        for (j, &m) in categories.iter().enumerate() {
            if m < 2 {
                return Err(Error::BadCategoryCount {
                    question: j + 1,
                    count: m,
                });
            }
            if m > u16::MAX as usize {
                return Err(Error::BadCategoryCount {
                    question: j + 1,
                    count: m,
                });
            }
        }
        let mut responses = vec![0u16; n * q];
        let mut observed = vec![false; n * q];
        for (i, row) in raw.iter().enumerate() {
            if row.len() != q {
                return Err(Error::RaggedTable {
                    row: i + 1,
                    found: row.len(),
                    expected: q,
                });
            }
            for (j, cell) in row.iter().enumerate() {
                if let Some(v) = *cell {
                    if v < 1 || v as u64 > categories[j] as u64 {
                        return Err(Error::CategoryOutOfRange {
                            respondent: i + 1,
                            question: j + 1,
                            value: v,
                            max: categories[j],
                        });
                    }
                    responses[i * q + j] = v as u16;
                    observed[i * q + j] = true;
                }
            }
        }
        let matrix = ResponseMatrix {
            n_respondents: n,
            n_questions: q,
            categories: categories.to_vec(),
            responses,
            observed,
            respondent_ids: (1..=n).map(|i| format!("r{i}")).collect(),
            question_ids: (1..=q).map(|j| format!("q{j}")).collect(),
            anchors: vec![None; q],
        };
        matrix.check_coverage()?;
        Ok(matrix)
    }

    fn check_coverage(&self) -> Result<()> {
        for i in 0..self.n_respondents {
            if !(0..self.n_questions).any(|j| self.is_observed(i, j)) {
                return Err(Error::EmptyRow(i + 1));
            }
        }
        for j in 0..self.n_questions {
            if !(0..self.n_respondents).any(|i| self.is_observed(i, j)) {
                return Err(Error::EmptyColumn(j + 1));
            }
        }
        Ok(())
    }

    pub fn n_respondents(&self) -> usize {
        self.n_respondents
    }

    pub fn n_questions(&self) -> usize {
        self.n_questions
    }

    pub fn categories(&self) -> &[usize] {
        &self.categories
    }

    pub fn n_categories(&self, question: usize) -> usize {
        self.categories[question]
    }

    pub fn max_categories(&self) -> usize {
        self.categories.iter().copied().max().unwrap_or(0)
    }

    /// 1-based category at (i, j), `None` when missing.
    #[inline]
    pub fn get(&self, respondent: usize, question: usize) -> Option<usize> {
        let idx = respondent * self.n_questions + question;
        self.observed[idx].then(|| self.responses[idx] as usize)
    }

    #[inline]
    pub fn is_observed(&self, respondent: usize, question: usize) -> bool {
        self.observed[respondent * self.n_questions + question]
    }

    /// Row-major observation mask.
    pub fn observed_mask(&self) -> &[bool] {
        &self.observed
    }

    pub fn n_observed(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    /// Observed cells in row-major order as `(respondent, question, category)`.
    pub fn observed_cells(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let q = self.n_questions;
        self.observed
            .iter()
            .enumerate()
            .filter(|(_, &o)| o)
            .map(move |(idx, _)| (idx / q, idx % q, self.responses[idx] as usize))
    }

    /// Unobserved cells in row-major order.
    pub fn missing_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let q = self.n_questions;
        self.observed
            .iter()
            .enumerate()
            .filter(|(_, &o)| !o)
            .map(move |(idx, _)| (idx / q, idx % q))
    }

    pub fn respondent_ids(&self) -> &[String] {
        &self.respondent_ids
    }

    pub fn question_ids(&self) -> &[String] {
        &self.question_ids
    }

    /// Declared correct (anchor) categories, 1-based, per question.
    pub fn anchors(&self) -> &[Option<usize>] {
        &self.anchors
    }

    /// 0-based anchor index per question; category 1 where none is declared.
    pub fn anchor_indices(&self) -> Vec<usize> {
        self.anchors.iter().map(|a| a.map_or(0, |c| c - 1)).collect()
    }

    pub fn with_ids(mut self, respondents: Vec<String>, questions: Vec<String>) -> Result<Self> {
        if respondents.len() != self.n_respondents || questions.len() != self.n_questions {
            return Err(Error::DimensionMismatch(
                "ID lists must match the matrix dimensions".into(),
            ));
        }
        self.respondent_ids = respondents;
        self.question_ids = questions;
        Ok(self)
    }

    pub fn with_anchors(mut self, anchors: Vec<Option<usize>>) -> Result<Self> {
        if anchors.len() != self.n_questions {
            return Err(Error::DimensionMismatch(
                "anchor list must have one entry per question".into(),
            ));
        }
        for (j, a) in anchors.iter().enumerate() {
            if let Some(c) = *a {
                if c < 1 || c > self.categories[j] {
                    return Err(Error::InvalidParameter(format!(
                        "anchor category {c} for question {} outside 1..={}",
                        j + 1,
                        self.categories[j]
                    )));
                }
            }
        }
        self.anchors = anchors;
        Ok(self)
    }

    /// Copy of this matrix with the listed cells (0-based) marked missing.
    ///
    /// Does not re-check row/column coverage; callers that need it use
    /// [`ResponseMatrix::validate_coverage`].
    pub fn with_cells_removed(&self, cells: &[(usize, usize)]) -> ResponseMatrix {
        let mut out = self.clone();
        for &(i, j) in cells {
            let idx = i * self.n_questions + j;
            out.observed[idx] = false;
            out.responses[idx] = 0;
        }
        out
    }

    pub fn validate_coverage(&self) -> Result<()> {
        self.check_coverage()
    }

    /// Dense table view, `None` where missing.
    pub fn to_table(&self) -> Vec<Vec<Option<i64>>> {
        (0..self.n_respondents)
            .map(|i| {
                (0..self.n_questions)
                    .map(|j| self.get(i, j).map(|c| c as i64))
                    .collect()
            })
            .collect()
    }

    /// Sidecar carrying everything the long CSV cannot express on its own.
    pub fn sidecar(&self) -> Sidecar {
        let mut cats = BTreeMap::new();
        let mut anchors = BTreeMap::new();
        for (j, id) in self.question_ids.iter().enumerate() {
            cats.insert(id.clone(), self.categories[j]);
            if let Some(a) = self.anchors[j] {
                anchors.insert(id.clone(), a);
            }
        }
        Sidecar {
            respondents: Some(self.respondent_ids.clone()),
            questions: Some(self.question_ids.clone()),
            categories_per_question: Some(cats),
            anchor: if anchors.is_empty() { None } else { Some(anchors) },
        }
    }

    /// Write the long-format CSV, one row per observed cell in row-major order.
    pub fn write_long_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["respondent", "question", "category"])?;
        for (i, j, c) in self.observed_cells() {
            w.write_record([
                self.respondent_ids[i].as_str(),
                self.question_ids[j].as_str(),
                c.to_string().as_str(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parse the long-format CSV, optionally guided by a sidecar.
    pub fn read_long_csv<R: Read>(reader: R, sidecar: Option<&Sidecar>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.eq_ignore_ascii_case(name))
                .ok_or_else(|| Error::Parse(format!("missing column `{name}` in header")))
        };
        let (ci, cq, cc) = (col("respondent")?, col("question")?, col("category")?);

        let mut respondents = IdIndex::default();
        let mut questions = IdIndex::default();
        if let Some(s) = sidecar {
            for id in s.respondents.iter().flatten() {
                respondents.insert(id);
            }
            for id in s.questions.iter().flatten() {
                questions.insert(id);
            }
        }
        let pinned_respondents = sidecar.and_then(|s| s.respondents.as_ref()).is_some();
        let pinned_questions = sidecar.and_then(|s| s.questions.as_ref()).is_some();

        let mut cells: Vec<(usize, usize, Option<i64>, usize)> = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            let line = line + 2;
            let field = |k: usize| record.get(k).unwrap_or("");
            let r_id = field(ci);
            let q_id = field(cq);
            if r_id.is_empty() || q_id.is_empty() {
                return Err(Error::Parse(format!("line {line}: empty respondent or question ID")));
            }
            let i = match respondents.get(r_id) {
                Some(i) => i,
                None if pinned_respondents => {
                    return Err(Error::Parse(format!(
                        "line {line}: respondent `{r_id}` not listed in sidecar"
                    )))
                }
                None => respondents.insert(r_id),
            };
            let j = match questions.get(q_id) {
                Some(j) => j,
                None if pinned_questions => {
                    return Err(Error::Parse(format!(
                        "line {line}: question `{q_id}` not listed in sidecar"
                    )))
                }
                None => questions.insert(q_id),
            };
            let raw = field(cc);
            let value = if raw.is_empty() || raw.eq_ignore_ascii_case("NA") {
                None
            } else {
                Some(raw.parse::<i64>().map_err(|_| {
                    Error::Parse(format!("line {line}: category `{raw}` is not an integer"))
                })?)
            };
            cells.push((i, j, value, line));
        }

        let n = respondents.ids.len();
        let q = questions.ids.len();
        let mut table = vec![vec![None; q]; n];
        let mut seen = vec![false; n * q];
        for &(i, j, v, line) in &cells {
            if seen[i * q + j] {
                return Err(Error::Parse(format!(
                    "line {line}: duplicate response for respondent `{}` question `{}`",
                    respondents.ids[i], questions.ids[j]
                )));
            }
            seen[i * q + j] = true;
            table[i][j] = v;
        }

        let declared = sidecar.and_then(|s| s.categories_per_question.as_ref());
        let mut categories = Vec::with_capacity(q);
        for (j, id) in questions.ids.iter().enumerate() {
            let m = match declared.and_then(|d| d.get(id)) {
                Some(&m) => m,
                None => table
                    .iter()
                    .filter_map(|row| row[j])
                    .max()
                    .map_or(0, |m| m.max(0) as usize),
            };
            categories.push(m);
        }

        let anchors = match sidecar.and_then(|s| s.anchor.as_ref()) {
            Some(map) => {
                for key in map.keys() {
                    if questions.get(key).is_none() {
                        return Err(Error::Parse(format!(
                            "sidecar anchor names unknown question `{key}`"
                        )));
                    }
                }
                questions.ids.iter().map(|id| map.get(id).copied()).collect()
            }
            None => vec![None; q],
        };

        ResponseMatrix::from_table(&table, &categories)?
            .with_ids(respondents.ids, questions.ids)?
            .with_anchors(anchors)
    }

    /// Read `path`, picking up `path` with a `.json` extension as sidecar when
    /// `sidecar` is not given and such a file exists.
    pub fn load(path: &Path, sidecar: Option<&Path>) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let auto = path.with_extension("json");
        let side_path = sidecar.map(Path::to_path_buf).or_else(|| auto.exists().then_some(auto));
        let side = match side_path {
            Some(p) => Some(Sidecar::load(&p)?),
            None => None,
        };
        Self::read_long_csv(std::io::BufReader::new(file), side.as_ref())
    }
}

/// Optional JSON companion to the long CSV.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    /// Respondent IDs in index order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub respondents: Option<Vec<String>>,
    /// Question IDs in index order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub questions: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories_per_question: Option<BTreeMap<String, usize>>,
    /// Correct (anchor) category per question ID, 1-based.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<BTreeMap<String, usize>>,
}

impl Sidecar {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }
}

#[derive(Default)]
struct IdIndex {
    ids: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl IdIndex {
    fn get(&self, id: &str) -> Option<usize> {
        self.lookup.get(id).copied()
    }

    fn insert(&mut self, id: &str) -> usize {
        if let Some(i) = self.get(id) {
            return i;
        }
        let i = self.ids.len();
        self.ids.push(id.to_string());
        self.lookup.insert(id.to_string(), i);
        i
    }
}
