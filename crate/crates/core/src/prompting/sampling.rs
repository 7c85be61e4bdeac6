use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::catalog::FlowRecord;

use super::{IclExample, PromptContext, PromptError};

/// Picks `n` labeled records, balanced between classes (counts differ by at
/// most one) and alternating, starting with benign. If benign records are
/// short by one for an odd `n`, malicious takes the larger share and leads.
///
/// Returns positions into `dataset`. The shuffle depends only on `seed` and
/// the dataset, so for a fixed seed a smaller `n` picks a prefix-balanced
/// subset of a larger one.
pub fn sample_example_indices(
    dataset: &[FlowRecord],
    n: usize,
    seed: u64,
) -> Result<Vec<usize>, PromptError> {
    if n == 0 {
        return Err(PromptError::EmptyExamples);
    }
    let mut benign = Vec::new();
    let mut malicious = Vec::new();
    for (i, record) in dataset.iter().enumerate() {
        match &record.label {
            Some(l) if l.is_malicious() => malicious.push(i),
            Some(_) => benign.push(i),
            None => {}
        }
    }
    let major = n.div_ceil(2);
    let minor = n / 2;
    let benign_leads = if benign.len() >= major && malicious.len() >= minor {
        true
    } else if malicious.len() >= major && benign.len() >= minor {
        false
    } else {
        return Err(PromptError::InsufficientExamples {
            wanted: n,
            benign: benign.len(),
            malicious: malicious.len(),
        });
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    benign.shuffle(&mut rng);
    malicious.shuffle(&mut rng);
    let (lead, follow) = if benign_leads {
        (&benign[..major], &malicious[..minor])
    } else {
        (&malicious[..major], &benign[..minor])
    };
    let mut picked = Vec::with_capacity(n);
    for (i, &l) in lead.iter().enumerate() {
        picked.push(l);
        if let Some(&f) = follow.get(i) {
            picked.push(f);
        }
    }
    Ok(picked)
}

pub fn sample_examples(
    dataset: &[FlowRecord],
    n: usize,
    seed: u64,
    ctx: &PromptContext<'_>,
) -> Result<Vec<IclExample>, PromptError> {
    sample_example_indices(dataset, n, seed)?
        .into_iter()
        .map(|i| IclExample::new(dataset[i].clone(), ctx))
        .collect()
}
