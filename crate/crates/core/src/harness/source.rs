use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::HarnessError;

/// Where testcases come from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TestcaseSource {
    /// One raw byte file.
    SingleFile(PathBuf),
    /// Every regular file in a directory, in lexicographic order of name.
    Directory(PathBuf),
    /// Seeded random byte strings with lengths drawn from `len`.
    Generator { seed: u64, len: RangeInclusive<usize> },
}

/// One testcase and the label it is reported under.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Testcase {
    pub name: String,
    pub data: Vec<u8>,
}

fn read(path: &Path) -> Result<Vec<u8>, HarnessError> {
    std::fs::read(path).map_err(|e| HarnessError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

impl TestcaseSource {
    pub fn generator(seed: u64) -> Self {
        TestcaseSource::Generator { seed, len: 0..=64 }
    }

    /// The first `count` testcases, or `SourceExhausted` if there are fewer.
    pub fn take(&self, count: usize) -> Result<Vec<Testcase>, HarnessError> {
        let all = match self {
            TestcaseSource::SingleFile(path) => vec![Testcase {
                name: path.display().to_string(),
                data: read(path)?,
            }],
            TestcaseSource::Directory(dir) => {
                let io = |e: std::io::Error| HarnessError::Io {
                    path: dir.clone(),
                    message: e.to_string(),
                };
                let mut paths = Vec::new();
                for entry in std::fs::read_dir(dir).map_err(io)? {
                    let entry = entry.map_err(io)?;
                    if entry.file_type().map_err(io)?.is_file() {
                        paths.push(entry.path());
                    }
                }
                paths.sort();
                paths
                    .into_iter()
                    .take(count)
                    .map(|p| {
                        Ok(Testcase {
                            name: p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
                            data: read(&p)?,
                        })
                    })
                    .collect::<Result<_, HarnessError>>()?
            }
            TestcaseSource::Generator { seed, len } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                (0..count)
                    .map(|i| {
                        let n = rng.random_range(len.clone());
                        let mut data = vec![0; n];
                        rng.fill(&mut data[..]);
                        Testcase {
                            name: format!("gen-{i}"),
                            data,
                        }
                    })
                    .collect()
            }
        };
        if all.len() < count {
            return Err(HarnessError::SourceExhausted {
                wanted: count,
                got: all.len(),
            });
        }
        Ok(all.into_iter().take(count).collect())
    }
}
