use crate::dataset::{normalize_views, stack_sample, DatasetIndex, Sample, Split};
use crate::error::Result;
use crate::model::Variant;
use crate::tensor::Scalar;

/// Stacked, normalized samples of one split with their `(sequence, t)`.
#[derive(Clone, Debug)]
pub struct SplitSamples<T> {
    pub ids: Vec<(String, usize)>,
    pub samples: Vec<Sample<T>>,
}

impl<T> SplitSamples<T> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// The first `n` samples.
    pub fn truncated(mut self, n: usize) -> Self {
        self.ids.truncate(n);
        self.samples.truncate(n);
        self
    }
}

/// Every `t ≥ q` of every sequence in `split`, min-max normalized with the
/// dataset statistics.
pub fn load_samples<T: Scalar>(index: &DatasetIndex, split: Split, variant: Variant, q: usize) -> Result<SplitSamples<T>> {
    let seqs: Vec<_> = index.sequences_in(split).cloned().collect();
    let frames = index.load_split(split)?;
    let mut out = SplitSamples { ids: Vec::new(), samples: Vec::new() };
    for (info, seq) in seqs.iter().zip(frames) {
        let seq = seq.iter().map(|f| normalize_views(f, &index.stats)).collect::<Result<Vec<_>>>()?;
        for t in q..seq.len() {
            if let Some(s) = stack_sample(&seq, t, q, variant.layout(), variant.uses_ad())? {
                out.ids.push((info.id.clone(), t));
                out.samples.push(s);
            }
        }
    }
    Ok(out)
}
