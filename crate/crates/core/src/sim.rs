//! Simulator sources: the toy computer model with deterministic
//! non-convergence, the matching field-data generator, and a file-based batch
//! adapter for external simulators.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::design::{default_maximin_iters, lhs, maximin_lhs, DesignMatrix};
use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::seeds::derive_seed;

/// Calibration parameters that generate the toy field data.
pub const TOY_U_TRUE: [f64; 2] = [0.8, 0.2];

/// Responses of one simulator batch; `None` marks a run that did not converge.
#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub values: Vec<Option<f64>>,
    pub n_requested: usize,
    pub n_converged: usize,
}

impl SimResult {
    pub fn new(values: Vec<Option<f64>>) -> Self {
        let n_converged = values.iter().filter(|v| v.is_some()).count();
        Self {
            n_requested: values.len(),
            n_converged,
            values,
        }
    }

    pub fn n_missing(&self) -> usize {
        self.n_requested - self.n_converged
    }

    pub fn missing_fraction(&self) -> f64 {
        if self.n_requested == 0 {
            0.0
        } else {
            self.n_missing() as f64 / self.n_requested as f64
        }
    }

    /// Writes the single-column `y` CSV with `NA` for missing runs.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "y")?;
        for v in &self.values {
            match v {
                Some(x) => writeln!(w, "{}", fmt_f64(*x))?,
                None => writeln!(w, "NA")?,
            }
        }
        Ok(())
    }

    /// Parses the single-column `y` CSV. `NA` (any case) or an empty field is
    /// a missing run.
    pub fn read_csv<R: Read>(mut r: R) -> Result<Self> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        let mut lines: Vec<&str> = text.split('\n').map(|l| l.trim_end_matches('\r')).collect();
        if lines.last() == Some(&"") {
            lines.pop();
        }
        let mut it = lines.into_iter();
        match it.next().map(str::trim) {
            Some("y") => {}
            other => {
                return Err(Error::Protocol(format!(
                    "response file must start with header `y`, found {other:?}"
                )))
            }
        }
        let mut values = Vec::new();
        for (i, line) in it.enumerate() {
            let field = line.trim();
            if field.is_empty() || field.eq_ignore_ascii_case("na") {
                values.push(None);
            } else {
                let v: f64 = field.parse().map_err(|_| Error::Parse {
                    row: i + 1,
                    message: format!("cannot parse response {field:?}"),
                })?;
                values.push(Some(v));
            }
        }
        Ok(Self::new(values))
    }
}

/// Anything that can evaluate a batch of full `(x, u)` input rows.
pub trait Simulator: Sync {
    fn simulate(&self, inputs: &DesignMatrix) -> Result<SimResult>;
}

/// The noiseless toy response `cos(25 sin(x) x u1 / (x + u2))`.
pub fn toy_response(x: f64, u1: f64, u2: f64) -> Result<f64> {
    let denom = x + u2;
    if denom == 0.0 {
        return Err(Error::invalid("toy model undefined at x + u2 = 0"));
    }
    Ok((25.0 * x.sin() * x * u1 / denom).cos())
}

/// Toy computer model: the response is missing when `u1·u2 > 0.5` and
/// `round(5 y)` is even.
pub fn toy_model(x: f64, u1: f64, u2: f64) -> Result<Option<f64>> {
    let y = toy_response(x, u1, u2)?;
    let even = ((5.0 * y).round() as i64).rem_euclid(2) == 0;
    if u1 * u2 > 0.5 && even {
        Ok(None)
    } else {
        Ok(Some(y))
    }
}

/// Toy real process: the model at the true `u` (never missing) plus the
/// discrepancy `sin(4x)`.
pub fn true_process(x: f64) -> f64 {
    toy_response(x, TOY_U_TRUE[0], TOY_U_TRUE[1]).expect("x + 0.2 > 0 on [0,1]") + (4.0 * x).sin()
}

/// In-process toy simulator over rows `(x, u1, u2)`.
#[derive(Debug, Clone, Copy)]
pub struct ToySimulator {
    /// Apply the non-convergence rule (on by default).
    pub missingness: bool,
}

impl Default for ToySimulator {
    fn default() -> Self {
        Self { missingness: true }
    }
}

impl Simulator for ToySimulator {
    fn simulate(&self, inputs: &DesignMatrix) -> Result<SimResult> {
        if inputs.ncols() != 3 && inputs.nrows() > 0 {
            return Err(Error::invalid(format!(
                "toy simulator takes (x, u1, u2) rows, got {} columns",
                inputs.ncols()
            )));
        }
        let values = inputs
            .rows()
            .map(|r| {
                if self.missingness {
                    toy_model(r[0], r[1], r[2])
                } else {
                    toy_response(r[0], r[1], r[2]).map(Some)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SimResult::new(values))
    }
}

/// Field observations: `N_F` input sites with responses.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldDataset {
    pub x: DesignMatrix,
    pub y: Vec<f64>,
    pub noise_sd: f64,
}

impl FieldDataset {
    pub fn new(x: DesignMatrix, y: Vec<f64>, noise_sd: f64) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::invalid("field dataset needs at least one site"));
        }
        if x.nrows() != y.len() {
            return Err(Error::invalid("field sites and responses differ in length"));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("field responses must be finite"));
        }
        Ok(Self { x, y, noise_sd })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn px(&self) -> usize {
        self.x.ncols()
    }

    pub fn site(&self, i: usize) -> &[f64] {
        self.x.row(i)
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            noise_sd: self.noise_sd,
        }
    }

    /// CSV with columns `x1..xp,y`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (1..=self.px()).map(|k| format!("x{k}")).collect();
        header.push("y".into());
        wr.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.site(i).iter().map(|&v| fmt_f64(v)).collect();
            rec.push(fmt_f64(self.y[i]));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, noise_sd: f64) -> Result<Self> {
        let dm = DesignMatrix::read_csv(r)?;
        let p = dm.ncols();
        if p < 2 {
            return Err(Error::Parse {
                row: 0,
                message: "field CSV needs x columns and a final y column".into(),
            });
        }
        let rows: Vec<Vec<f64>> = dm.rows().map(|r| r[..p - 1].to_vec()).collect();
        let y = dm.rows().map(|r| r[p - 1]).collect();
        Self::new(DesignMatrix::from_row_vecs(&rows)?, y, noise_sd)
    }

    /// SHA-256 of the CSV serialization, hex encoded.
    pub fn hash(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        hex::encode(Sha256::digest(&buf))
    }
}

/// Toy field data: sites from a maximin LHS in `x`, responses from
/// [`true_process`] plus i.i.d. Gaussian noise.
pub fn gen_field(n_f: usize, noise_sd: f64, seed: u64) -> Result<FieldDataset> {
    if n_f == 0 {
        return Err(Error::invalid("need at least one field site"));
    }
    if !(noise_sd >= 0.0) {
        return Err(Error::invalid("noise sd must be nonnegative"));
    }
    let x = if n_f >= 2 {
        maximin_lhs(n_f, 1, seed, default_maximin_iters(n_f, 1))?
    } else {
        lhs(1, 1, seed)?
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX));
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let y = x
        .rows()
        .map(|r| true_process(r[0]) + noise_sd * normal.sample(&mut rng))
        .collect();
    FieldDataset::new(x, y, noise_sd)
}

/// External simulator configuration, read from JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdapterConfig {
    /// Shell command; invoked as `<command> <input.csv> <output.csv>`.
    pub command: String,
    pub workdir: PathBuf,
    pub timeout_seconds: f64,
}

/// Handle to an external simulator speaking the CSV batch protocol.
#[derive(Debug)]
pub enum BatchAdapter {
    /// Run a program per batch.
    Command {
        config: AdapterConfig,
        /// One invocation at a time per handle; the counter names batch files.
        calls: Mutex<u64>,
    },
    /// Read a precomputed response file.
    ResponseFile(PathBuf),
}

impl BatchAdapter {
    pub fn command(config: AdapterConfig) -> Self {
        BatchAdapter::Command {
            config,
            calls: Mutex::new(0),
        }
    }

    pub fn from_config_file(path: &Path) -> Result<Self> {
        Ok(Self::command(crate::io::read_json(path)?))
    }
}

fn read_response(path: &Path, expected: usize) -> Result<SimResult> {
    let res = SimResult::read_csv(crate::io::open(path)?)?;
    if res.n_requested != expected {
        return Err(Error::Protocol(format!(
            "{} responses for {expected} input rows",
            res.n_requested
        )));
    }
    Ok(res)
}

/// Evaluates a design through an external simulator.
pub fn batch_simulate(adapter: &BatchAdapter, inputs: &DesignMatrix) -> Result<SimResult> {
    if inputs.nrows() == 0 {
        return Ok(SimResult::new(Vec::new()));
    }
    match adapter {
        BatchAdapter::ResponseFile(path) => read_response(path, inputs.nrows()),
        BatchAdapter::Command { config, calls } => {
            let mut guard = calls.lock().unwrap_or_else(|p| p.into_inner());
            *guard += 1;
            let k = *guard;
            fs::create_dir_all(&config.workdir)?;
            let input = config.workdir.join(format!("batch_{k:06}_in.csv"));
            let output = config.workdir.join(format!("batch_{k:06}_out.csv"));
            inputs.write_csv(crate::io::create(&input)?)?;
            let _ = fs::remove_file(&output);

            let script = format!(
                "{} '{}' '{}'",
                config.command,
                input.display(),
                output.display()
            );
            let mut child = Command::new("sh")
                .arg("-c")
                .arg(&script)
                .current_dir(&config.workdir)
                .stdin(Stdio::null())
                .spawn()
                .map_err(|e| Error::SimulatorFailure(format!("cannot start `{script}`: {e}")))?;
            let deadline = Instant::now() + Duration::from_secs_f64(config.timeout_seconds.max(0.0));
            let status = loop {
                if let Some(status) = child.try_wait()? {
                    break status;
                }
                if Instant::now() >= deadline {
                    let _ = child.kill();
                    let _ = child.wait();
                    log::warn!("simulator batch {k} timed out after {}s", config.timeout_seconds);
                    return Ok(SimResult::new(vec![None; inputs.nrows()]));
                }
                std::thread::sleep(Duration::from_millis(5));
            };
            if !status.success() {
                return Err(Error::SimulatorFailure(format!(
                    "`{script}` exited with {status}"
                )));
            }
            read_response(&output, inputs.nrows())
        }
    }
}

impl Simulator for BatchAdapter {
    fn simulate(&self, inputs: &DesignMatrix) -> Result<SimResult> {
        batch_simulate(self, inputs)
    }
}

/// File-protocol entry point for the bundled toy simulator: reads `(x,u1,u2)`
/// rows from `input`, writes the `y` column to `output`.
pub fn toy_adapter_main(input: &Path, output: &Path) -> Result<()> {
    let design = DesignMatrix::read_csv(crate::io::open(input)?)?;
    let res = ToySimulator::default().simulate(&design)?;
    let mut w = crate::io::create(output)?;
    res.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn toy_at_zero_x_is_one() {
        assert_eq!(toy_model(0.0, 0.3, 0.4).unwrap(), Some(1.0));
        // round(5) = 5 is odd, so not missing even above the threshold
        assert_eq!(toy_model(0.0, 0.9, 0.9).unwrap(), Some(1.0));
        assert!(toy_model(0.0, 0.5, 0.0).is_err());
    }

    #[test]
    fn true_process_values() {
        assert_eq!(true_process(0.0), 1.0);
        // independent evaluation of cos(25 sin(0.5) 0.5 0.8 / 0.7) + sin(2)
        let inner = 25.0 * 0.479_425_538_604_203_f64 * 0.5 * 0.8 / 0.7;
        let expect = inner.cos() + 0.909_297_426_825_681_7;
        assert!((true_process(0.5) - expect).abs() < 1e-12);
        for x in [0.1, 0.37, 0.99] {
            let resid = true_process(x) - (4.0 * x).sin();
            assert!((resid - toy_response(x, 0.8, 0.2).unwrap()).abs() < 1e-15);
        }
    }

    #[test]
    fn design_missingness_rate() {
        let d = maximin_lhs(500, 3, 1, default_maximin_iters(500, 3)).unwrap();
        let res = ToySimulator::default().simulate(&d).unwrap();
        let f = res.missing_fraction();
        assert!((0.03..=0.11).contains(&f), "missing fraction {f}");
    }

    #[test]
    fn zero_noise_field_is_exact() {
        let f = gen_field(10, 0.0, 4).unwrap();
        for i in 0..10 {
            assert_eq!(f.y[i], true_process(f.site(i)[0]));
        }
        assert_eq!(gen_field(10, 0.02, 4).unwrap(), gen_field(10, 0.02, 4).unwrap());
    }

    #[test]
    fn field_noise_sd_is_honored() {
        // 10^4 draws pooled over 100 small fields (a single 10^4-site
        // maximin design would dominate the test's runtime)
        let mut r = Vec::new();
        for seed in 0..100 {
            let f = gen_field(100, 0.02, seed).unwrap();
            r.extend((0..f.len()).map(|i| f.y[i] - true_process(f.site(i)[0])));
        }
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        let sd = (r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r.len() - 1) as f64).sqrt();
        assert!((sd - 0.02).abs() < 0.002, "sd {sd}");
    }

    #[test]
    fn parse_response_file() {
        let res = SimResult::read_csv("y\n1.0\nNA\n3.5\n".as_bytes()).unwrap();
        assert_eq!(res.values, vec![Some(1.0), None, Some(3.5)]);
        assert_eq!(res.n_converged, 2);
        let res = SimResult::read_csv("y\n\nna\n2\n".as_bytes()).unwrap();
        assert_eq!(res.values, vec![None, None, Some(2.0)]);
        match SimResult::read_csv("y\n1\nxyz\n".as_bytes()) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn response_file_adapter_checks_row_count() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("resp.csv");
        fs::write(&path, "y\n1.0\nNA\n3.5\n").unwrap();
        let adapter = BatchAdapter::ResponseFile(path);
        let three = DesignMatrix::from_rows(3, 1, vec![0.1, 0.2, 0.3]).unwrap();
        assert_eq!(batch_simulate(&adapter, &three).unwrap().n_converged, 2);
        let two = DesignMatrix::from_rows(2, 1, vec![0.1, 0.2]).unwrap();
        assert!(matches!(batch_simulate(&adapter, &two), Err(Error::Protocol(_))));
        let empty = batch_simulate(&adapter, &DesignMatrix::empty(1)).unwrap();
        assert_eq!(empty.n_requested, 0);
    }

    #[test]
    fn command_adapter_runs_and_fails_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        let design = DesignMatrix::from_rows(2, 1, vec![0.1, 0.2]).unwrap();
        let ok = BatchAdapter::command(AdapterConfig {
            command: "f() { printf 'y\\n4.0\\nNA\\n' > \"$2\"; }; f".into(),
            workdir: dir.path().to_path_buf(),
            timeout_seconds: 10.0,
        });
        assert_eq!(batch_simulate(&ok, &design).unwrap().values, vec![Some(4.0), None]);

        let failing = BatchAdapter::command(AdapterConfig {
            command: "false".into(),
            workdir: dir.path().to_path_buf(),
            timeout_seconds: 10.0,
        });
        assert!(matches!(batch_simulate(&failing, &design), Err(Error::SimulatorFailure(_))));

        let slow = BatchAdapter::command(AdapterConfig {
            command: "sleep 5;".into(),
            workdir: dir.path().to_path_buf(),
            timeout_seconds: 0.2,
        });
        let res = batch_simulate(&slow, &design).unwrap();
        assert_eq!(res.values, vec![None, None]);
    }

    proptest! {
        #[test]
        fn toy_is_deterministic(x in 0.0f64..1.0, u1 in 0.0f64..1.0, u2 in 1e-9f64..1.0) {
            let a = toy_model(x, u1, u2).unwrap();
            let b = toy_model(x, u1, u2).unwrap();
            prop_assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
        }

        #[test]
        fn no_missingness_below_threshold(x in 0.0f64..1.0, u1 in 0.0f64..1.0, u2 in 1e-9f64..1.0) {
            prop_assume!(u1 * u2 <= 0.5);
            prop_assert!(toy_model(x, u1, u2).unwrap().is_some());
        }
    }
}
