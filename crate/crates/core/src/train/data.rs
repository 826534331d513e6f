use std::io::Read;
use std::path::Path;
use std::sync::mpsc::{sync_channel, Receiver};
use std::thread::JoinHandle;

use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::tensor::Tensor;
use rand::seq::index;

/// Per-column standardization statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Population mean/std of each column of a `[n, d]` matrix. Constant
    /// columns get std 1 so they map to zero.
    pub fn fit(t: &Tensor) -> Self {
        let (n, d) = (t.shape()[0], t.shape()[1]);
        let mut mean = vec![0.0; d];
        let mut std = vec![0.0; d];
        for j in 0..d {
            let col = (0..n).map(|i| t.data()[i * d + j]);
            let m = col.clone().sum::<f64>() / n as f64;
            let var = col.map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
            mean[j] = m;
            std[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        Normalizer { mean, std }
    }

    pub fn apply(&self, t: &Tensor) -> Tensor {
        self.columnwise(t, |v, m, s| (v - m) / s)
    }

    pub fn invert(&self, t: &Tensor) -> Tensor {
        self.columnwise(t, |v, m, s| v * s + m)
    }

    fn columnwise(&self, t: &Tensor, f: impl Fn(f64, f64, f64) -> f64) -> Tensor {
        let d = self.mean.len();
        let data = t
            .data()
            .iter()
            .enumerate()
            .map(|(k, &v)| f(v, self.mean[k % d], self.std[k % d]))
            .collect();
        Tensor::new(t.shape(), data).expect("same shape")
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    /// `[n, features]`
    pub x: Tensor,
    /// `[n, targets]`
    pub y: Tensor,
    pub feature_names: Vec<String>,
    pub target_names: Vec<String>,
    pub feature_norm: Option<Normalizer>,
    pub target_norm: Option<Normalizer>,
}

impl Dataset {
    pub fn new(x: Tensor, y: Tensor) -> Result<Self> {
        if x.rank() != 2 || y.rank() != 2 || x.shape()[0] != y.shape()[0] {
            return Err(Error::shape("dataset", x.shape(), y.shape()));
        }
        let names = |p: &str, k: usize| (0..k).map(|i| format!("{p}{i}")).collect();
        Ok(Dataset {
            feature_names: names("x", x.shape()[1]),
            target_names: names("y", y.shape()[1]),
            x,
            y,
            feature_norm: None,
            target_norm: None,
        })
    }

    pub fn len(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Standardizes features and targets in place, keeping the statistics.
    pub fn normalize(&mut self) {
        let fx = Normalizer::fit(&self.x);
        let fy = Normalizer::fit(&self.y);
        self.x = fx.apply(&self.x);
        self.y = fy.apply(&self.y);
        self.feature_norm = Some(fx);
        self.target_norm = Some(fy);
    }

    pub fn batch(&self, indices: &[usize]) -> (Tensor, Tensor) {
        (gather_rows(&self.x, indices), gather_rows(&self.y, indices))
    }
}

pub fn load_csv(path: &Path, feature_cols: &[&str], target_cols: &[&str], normalize: bool) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file, path, feature_cols, target_cols, normalize)
}

/// Reads CSV with a header row from any reader; `path` labels errors.
pub fn read_csv(
    reader: impl Read,
    path: &Path,
    feature_cols: &[&str],
    target_cols: &[&str],
    normalize: bool,
) -> Result<Dataset> {
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let locate = |name: &&str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn {
            name: name.to_string(),
            available: headers.clone(),
        })
    };
    let fidx = feature_cols.iter().map(locate).collect::<Result<Vec<_>>>()?;
    let tidx = target_cols.iter().map(locate).collect::<Result<Vec<_>>>()?;

    let (mut xs, mut ys, mut n) = (Vec::new(), Vec::new(), 0);
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |j: usize| -> Result<f64> {
            let raw = &rec[j];
            raw.parse::<f64>()
                .map_err(|_| parse_err(line, format!("column `{}`: `{raw}` is not a number", headers[j])))
        };
        for &j in &fidx {
            xs.push(field(j)?);
        }
        for &j in &tidx {
            ys.push(field(j)?);
        }
        n += 1;
    }
    let mut ds = Dataset {
        x: Tensor::new(&[n, fidx.len()], xs)?,
        y: Tensor::new(&[n, tidx.len()], ys)?,
        feature_names: feature_cols.iter().map(|s| s.to_string()).collect(),
        target_names: target_cols.iter().map(|s| s.to_string()).collect(),
        feature_norm: None,
        target_norm: None,
    };
    if normalize {
        ds.normalize();
    }
    Ok(ds)
}

pub fn write_csv(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    let header: Vec<&str> = dataset
        .feature_names
        .iter()
        .chain(&dataset.target_names)
        .map(String::as_str)
        .collect();
    w.write_record(&header).map_err(csv_io)?;
    let (dx, dy) = (dataset.x.shape()[1], dataset.y.shape()[1]);
    for i in 0..dataset.len() {
        let row: Vec<String> = dataset.x.data()[i * dx..(i + 1) * dx]
            .iter()
            .chain(&dataset.y.data()[i * dy..(i + 1) * dy])
            .map(|v| v.to_string())
            .collect();
        w.write_record(&row).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub fn gather_rows(t: &Tensor, indices: &[usize]) -> Tensor {
    let row = t.len() / t.shape()[0].max(1);
    let mut data = Vec::with_capacity(indices.len() * row);
    for &i in indices {
        data.extend_from_slice(&t.data()[i * row..(i + 1) * row]);
    }
    let mut shape = t.shape().to_vec();
    shape[0] = indices.len();
    Tensor::new(&shape, data).expect("row gather")
}

const BATCH_STREAM: u64 = 0xBA7C;

/// Row indices for `step`: every row in order when `batch >= n`, otherwise
/// a seeded sample without replacement.
pub fn batch_indices(n: usize, batch: usize, seed: u64, step: u64) -> Vec<usize> {
    if batch >= n {
        return (0..n).collect();
    }
    let mut rng = rng_from(&[seed, BATCH_STREAM, step]);
    index::sample(&mut rng, n, batch).into_vec()
}

/// One minibatch, immutable once produced.
#[derive(Clone, Debug)]
pub struct Batch {
    pub step: u64,
    pub x: Tensor,
    pub y: Tensor,
}

/// Produces batches for steps `0..steps` on a background thread through a
/// bounded queue of `capacity` batches.
pub struct Prefetcher {
    rx: Receiver<Batch>,
    handle: Option<JoinHandle<()>>,
}

impl Prefetcher {
    pub fn spawn(dataset: &Dataset, batch: usize, seed: u64, steps: u64, capacity: usize) -> Self {
        let (tx, rx) = sync_channel(capacity.max(1));
        let (x, y, n) = (dataset.x.clone(), dataset.y.clone(), dataset.len());
        let handle = std::thread::spawn(move || {
            for step in 0..steps {
                let idx = batch_indices(n, batch, seed, step);
                let b = Batch {
                    step,
                    x: gather_rows(&x, &idx),
                    y: gather_rows(&y, &idx),
                };
                if tx.send(b).is_err() {
                    break;
                }
            }
        });
        Prefetcher {
            rx,
            handle: Some(handle),
        }
    }
}

impl Iterator for Prefetcher {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        self.rx.recv().ok()
    }
}

impl Drop for Prefetcher {
    fn drop(&mut self) {
        // Unblock a producer waiting on a full queue before joining.
        let (_, dead) = sync_channel(0);
        drop(std::mem::replace(&mut self.rx, dead));
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(text: &str, f: &[&str], t: &[&str], norm: bool) -> Result<Dataset> {
        read_csv(text.as_bytes(), Path::new("mem.csv"), f, t, norm)
    }

    #[test]
    fn single_row_round_trips() {
        let ds = read("a,b,c\n0.1,-2.5e-3,7\n", &["a", "c"], &["b"], false).unwrap();
        assert_eq!(ds.x.shape(), &[1, 2]);
        assert_eq!(ds.x.data(), &[0.1, 7.0]);
        assert_eq!(ds.y.data(), &[-2.5e-3]);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.csv");
        write_csv(&p, &ds).unwrap();
        let back = load_csv(&p, &["a", "c"], &["b"], false).unwrap();
        assert_eq!(back.x.data(), ds.x.data());
        assert_eq!(back.y.data(), ds.y.data());
    }

    #[test]
    fn normalization_standardizes_columns() {
        let ds = read("x,y\n1,10\n2,20\n4,25\n8,-3\n", &["x"], &["y"], true).unwrap();
        for t in [&ds.x, &ds.y] {
            let n = t.len() as f64;
            let m = t.sum() / n;
            let sd = (t.data().iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
            assert!(m.abs() < 1e-12 && (sd - 1.0).abs() < 1e-12);
        }
        let norm = ds.feature_norm.as_ref().unwrap();
        let restored = norm.invert(&ds.x);
        assert!(restored.max_abs_diff(&Tensor::new(&[4, 1], vec![1.0, 2.0, 4.0, 8.0]).unwrap()) < 1e-12);
    }

    #[test]
    fn missing_column_lists_headers() {
        match read("alpha,beta\n1,2\n", &["gamma"], &["beta"], false) {
            Err(Error::MissingColumn { name, available }) => {
                assert_eq!(name, "gamma");
                assert_eq!(available, vec!["alpha", "beta"]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn non_numeric_field_reports_line() {
        match read("x,y\n1,2\n3,oops\n", &["x"], &["y"], false) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("oops"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(read("x,y\n1,2,3\n", &["x"], &["y"], false), Err(Error::Parse { .. })));
    }

    #[test]
    fn batches_are_seeded_and_distinct() {
        let a = batch_indices(50, 8, 3, 7);
        assert_eq!(a, batch_indices(50, 8, 3, 7));
        assert_ne!(a, batch_indices(50, 8, 3, 8));
        let mut s = a.clone();
        s.sort();
        s.dedup();
        assert_eq!(s.len(), 8);
        assert_eq!(batch_indices(5, 10, 0, 0), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn prefetcher_matches_direct_batches() {
        let x = Tensor::new(&[20, 1], (0..20).map(f64::from).collect()).unwrap();
        let ds = Dataset::new(x.clone(), x).unwrap();
        let got: Vec<Batch> = Prefetcher::spawn(&ds, 4, 9, 6, 2).collect();
        assert_eq!(got.len(), 6);
        for b in &got {
            let idx = batch_indices(20, 4, 9, b.step);
            assert_eq!(b.x.data(), ds.batch(&idx).0.data());
        }
        let mut early = Prefetcher::spawn(&ds, 4, 9, 1000, 1);
        early.next();
        drop(early);
    }
}
