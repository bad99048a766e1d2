use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Sample {
    /// `(F̂, F̂̇)`.
    pub input: [f64; 6],
    /// Diagonal stress correction (Pa).
    pub target: [f64; 3],
    pub frame: usize,
    pub element: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingSet {
    pub samples: Vec<Sample>,
}

impl TrainingSet {
    pub fn new(samples: Vec<Sample>) -> Self {
        TrainingSet { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        for s in &self.samples {
            if !s.input.iter().chain(&s.target).all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "training sample (frame {}, element {})",
                    s.frame, s.element
                )));
            }
        }
        Ok(())
    }

    /// CSV dump: `frame,element,fhat0..2,fdot0..2,target0..2`.
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        use std::io::Write;
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "frame,element,fhat0,fhat1,fhat2,fdot0,fdot1,fdot2,target0,target1,target2")?;
        for s in &self.samples {
            write!(w, "{},{}", s.frame, s.element)?;
            for v in s.input.iter().chain(&s.target) {
                write!(w, ",{v:.17e}")?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut samples = Vec::new();
        for (n, line) in text.lines().enumerate().skip(1) {
            let bad = |m: &str| Error::Parse {
                file: path.to_path_buf(),
                message: format!("line {}: {m}", n + 1),
            };
            let toks: Vec<&str> = line.split(',').collect();
            if toks.len() != 11 {
                return Err(bad("expected 11 columns"));
            }
            let mut vals = [0.0; 9];
            for (v, t) in vals.iter_mut().zip(&toks[2..]) {
                *v = t.trim().parse().map_err(|_| bad("bad number"))?;
            }
            samples.push(Sample {
                frame: toks[0].trim().parse().map_err(|_| bad("bad frame"))?,
                element: toks[1].trim().parse().map_err(|_| bad("bad element"))?,
                input: vals[..6].try_into().unwrap(),
                target: vals[6..].try_into().unwrap(),
            });
        }
        Ok(TrainingSet { samples })
    }
}
