use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn epoch_rng(seed: u64, epoch: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Splits `items` into batches of `batch_size` (the last may be short).
/// With `shuffle`, the order is a permutation determined by `(seed, epoch)`.
pub fn batch_iter<T: Clone>(
    items: &[T],
    batch_size: usize,
    shuffle: bool,
    seed: u64,
    epoch: u64,
) -> impl Iterator<Item = Vec<T>> + '_ {
    let batch_size = batch_size.max(1);
    let mut order: Vec<usize> = (0..items.len()).collect();
    if shuffle {
        order.shuffle(&mut epoch_rng(seed, epoch));
    }
    let batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    batches
        .into_iter()
        .map(move |idx| idx.into_iter().map(|i| items[i].clone()).collect())
}

/// Seeded stratified hold-out: `fraction` of each label class goes to the
/// second returned set. Both sets keep the input order.
pub fn stratified_split<T: Clone>(
    items: &[T],
    label: impl Fn(&T) -> usize,
    fraction: f64,
    seed: u64,
) -> (Vec<T>, Vec<T>) {
    let mut held = vec![false; items.len()];
    let mut classes: Vec<usize> = items.iter().map(&label).collect();
    classes.sort_unstable();
    classes.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for class in classes {
        let mut idx: Vec<usize> = (0..items.len()).filter(|&i| label(&items[i]) == class).collect();
        idx.shuffle(&mut rng);
        let take = (idx.len() as f64 * fraction).round() as usize;
        for &i in &idx[..take.min(idx.len())] {
            held[i] = true;
        }
    }
    let mut keep = Vec::new();
    let mut out = Vec::new();
    for (item, h) in items.iter().zip(held) {
        if h {
            out.push(item.clone());
        } else {
            keep.push(item.clone());
        }
    }
    (keep, out)
}
