//! Train/test episode splits and activity-label filters.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use super::Dataset;
use crate::episode::ActivityLabel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LabelFilter {
    #[default]
    All,
    DrivingOnly,
}

impl LabelFilter {
    pub fn as_str(&self) -> &'static str {
        match self {
            LabelFilter::All => "all",
            LabelFilter::DrivingOnly => "driving",
        }
    }

    pub fn keeps(&self, label: ActivityLabel) -> bool {
        *self == LabelFilter::All || label == ActivityLabel::Driving
    }
}

impl fmt::Display for LabelFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LabelFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(LabelFilter::All),
            "driving" => Ok(LabelFilter::DrivingOnly),
            _ => Err(Error::invalid(format!(
                "unknown label filter '{s}' (expected all or driving)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitPart {
    Train,
    Test,
}

/// Disjoint train and test episode IDs plus the frame filter applied to both.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    train: Vec<String>,
    test: Vec<String>,
    pub filter: LabelFilter,
}

impl DatasetSplit {
    pub fn new(train: Vec<String>, test: Vec<String>, filter: LabelFilter) -> Result<Self> {
        if let Some(id) = train.iter().find(|id| test.contains(id)) {
            return Err(Error::invalid(format!("episode {id} is in both train and test")));
        }
        Ok(Self { train, test, filter })
    }

    /// The last `test_count` IDs are held out.
    pub fn holdout(ids: &[String], test_count: usize, filter: LabelFilter) -> Result<Self> {
        if test_count > ids.len() {
            return Err(Error::invalid(format!(
                "cannot hold out {test_count} of {} episodes",
                ids.len()
            )));
        }
        let cut = ids.len() - test_count;
        Self::new(ids[..cut].to_vec(), ids[cut..].to_vec(), filter)
    }

    pub fn train(&self) -> &[String] {
        &self.train
    }

    pub fn test(&self) -> &[String] {
        &self.test
    }

    pub fn part(&self, part: SplitPart) -> &[String] {
        match part {
            SplitPart::Train => &self.train,
            SplitPart::Test => &self.test,
        }
    }

    /// `train id…`, `test id…` and `filter all|driving` lines.
    pub fn to_text(&self) -> String {
        format!(
            "train {}\ntest {}\nfilter {}\n",
            self.train.join(" "),
            self.test.join(" "),
            self.filter
        )
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let (mut train, mut test, mut filter) = (None, None, None);
        for (i, line) in text.lines().enumerate() {
            let mut fields = line.split_whitespace();
            let ids = || fields.clone().skip(1).map(str::to_string).collect::<Vec<_>>();
            match fields.clone().next() {
                Some("train") => train = Some(ids()),
                Some("test") => test = Some(ids()),
                Some("filter") => {
                    let value = fields.nth(1).unwrap_or("");
                    filter = Some(
                        value
                            .parse()
                            .map_err(|e: Error| Error::parse(source, format!("line {}", i + 1), e.to_string()))?,
                    );
                }
                _ => {
                    return Err(Error::parse(
                        source,
                        format!("line {}", i + 1),
                        "expected train, test or filter",
                    ))
                }
            }
        }
        match (train, test) {
            (Some(train), Some(test)) => Self::new(train, test, filter.unwrap_or_default()),
            _ => Err(Error::parse(source, "end of file", "split needs train and test lines")),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, &path.display().to_string())
    }
}

/// A frame of a dataset: episode position and frame index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameRef {
    pub episode: usize,
    pub frame: usize,
}

/// Every frame of the listed episodes that passes the filter, in dataset order.
pub fn filter_episodes(dataset: &Dataset, ids: &[String], filter: LabelFilter) -> Result<Vec<FrameRef>> {
    let mut out = Vec::new();
    for id in ids {
        let e = dataset
            .position(id)
            .ok_or_else(|| Error::invalid(format!("split names unknown episode {id}")))?;
        out.extend(
            dataset.episodes[e]
                .episode
                .frames
                .iter()
                .enumerate()
                .filter(|(_, f)| filter.keeps(f.label))
                .map(|(frame, _)| FrameRef { episode: e, frame }),
        );
    }
    Ok(out)
}

/// The filtered frames of one side of a split.
pub fn filter_split(dataset: &Dataset, split: &DatasetSplit, part: SplitPart) -> Result<Vec<FrameRef>> {
    filter_episodes(dataset, split.part(part), split.filter)
}
