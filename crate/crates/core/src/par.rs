//! Data-parallel helpers. With the `parallel` feature the work is spread over
//! rayon's pool; without it, or through [`seq_map`], it runs in order on the
//! calling thread. Results come back in input order either way.

/// Maps `f` over `items`, in parallel when the feature is enabled.
#[cfg(feature = "parallel")]
pub fn par_map<I, R, F>(items: &[I], f: F) -> Vec<R>
where
    I: Sync,
    R: Send,
    F: Fn(&I) -> R + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn par_map<I, R, F>(items: &[I], f: F) -> Vec<R>
where
    I: Sync,
    R: Send,
    F: Fn(&I) -> R + Sync + Send,
{
    seq_map(items, f)
}

/// Sequential reference for [`par_map`].
pub fn seq_map<I, R, F>(items: &[I], f: F) -> Vec<R>
where
    F: Fn(&I) -> R,
{
    items.iter().map(f).collect()
}

/// Whether [`par_map`] actually runs in parallel in this build.
pub const PARALLEL: bool = cfg!(feature = "parallel");

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_kept() {
        let xs: Vec<u64> = (0..1000).collect();
        let sq = |x: &u64| x * x;
        assert_eq!(par_map(&xs, sq), seq_map(&xs, sq));
    }
}
