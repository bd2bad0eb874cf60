use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::McmcState;
use crate::error::{Error, Result};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
}

/// Retained draws of `B`, the upper triangle of `Λ`, and `τ_B`.
///
/// Parameter names are `B_p_d` and `Lambda_i_j` with 1-based indices.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    p: usize,
    d: usize,
    names: Vec<String>,
    /// One vector of draws per parameter.
    columns: Vec<Vec<f64>>,
}

impl PosteriorDraws {
    pub fn new(p: usize, d: usize, capacity: usize) -> Self {
        let mut names = Vec::with_capacity(p * d + d * (d + 1) / 2 + 1);
        for j in 0..p {
            for k in 0..d {
                names.push(format!("B_{}_{}", j + 1, k + 1));
            }
        }
        for i in 0..d {
            for j in i..d {
                names.push(format!("Lambda_{}_{}", i + 1, j + 1));
            }
        }
        names.push("tau_B".to_string());
        let columns = vec![Vec::with_capacity(capacity); names.len()];
        PosteriorDraws { p, d, names, columns }
    }

    pub fn push(&mut self, state: &McmcState) {
        let mut c = 0;
        for j in 0..self.p {
            for k in 0..self.d {
                self.columns[c].push(state.b[(j, k)]);
                c += 1;
            }
        }
        for i in 0..self.d {
            for j in i..self.d {
                self.columns[c].push(state.lambda[(i, j)]);
                c += 1;
            }
        }
        self.columns[c].push(state.tau_b);
    }

    pub fn n_draws(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|i| self.columns[i].as_slice())
    }

    /// Draws of `B[j,k]` (0-based).
    pub fn b_draws(&self, j: usize, k: usize) -> &[f64] {
        &self.columns[j * self.d + k]
    }

    pub fn tau_b_draws(&self) -> &[f64] {
        self.columns.last().expect("tau_B column")
    }

    pub fn b_mean(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.p, self.d, |j, k| stats::mean(self.b_draws(j, k)))
    }

    pub fn lambda_mean(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.d, self.d);
        let mut c = self.p * self.d;
        for i in 0..self.d {
            for j in i..self.d {
                let m = stats::mean(&self.columns[c]);
                out[(i, j)] = m;
                out[(j, i)] = m;
                c += 1;
            }
        }
        out
    }

    /// Equal-tailed 95% interval of `B[j,k]`.
    pub fn b_interval(&self, j: usize, k: usize) -> (f64, f64) {
        let mut v = self.b_draws(j, k).to_vec();
        v.sort_by(f64::total_cmp);
        (stats::quantile_sorted(&v, 0.025), stats::quantile_sorted(&v, 0.975))
    }

    pub fn summaries(&self) -> Vec<ParamSummary> {
        self.names
            .iter()
            .zip(&self.columns)
            .map(|(name, col)| {
                let mut sorted = col.clone();
                sorted.sort_by(f64::total_cmp);
                ParamSummary {
                    name: name.clone(),
                    mean: stats::mean(col),
                    sd: if col.len() > 1 { stats::std_dev(col) } else { 0.0 },
                    q025: stats::quantile_sorted(&sorted, 0.025),
                    q975: stats::quantile_sorted(&sorted, 0.975),
                }
            })
            .collect()
    }

    /// One row per retained draw, one column per parameter.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(BufWriter::new(file));
        let mut header = vec!["draw".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header).map_err(|e| Error::csv(path, e))?;
        for t in 0..self.n_draws() {
            let mut rec = vec![t.to_string()];
            rec.extend(self.columns.iter().map(|c| format!("{}", c[t])));
            w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Posterior summaries with caller-supplied context (seed, configuration).
    pub fn write_summary_json<T: Serialize>(&self, context: &T, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Out<'a, T> {
            n_draws: usize,
            context: &'a T,
            parameters: Vec<ParamSummary>,
        }
        let out = Out {
            n_draws: self.n_draws(),
            context,
            parameters: self.summaries(),
        };
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, &out).map_err(|e| Error::json(path, e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}
