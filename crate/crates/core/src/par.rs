//! Data-parallel helpers. With the `parallel` feature the batch entry points
//! fan out over rayon; without it everything runs on the calling thread.

/// How a batch should be executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parallelism {
    Sequential,
    /// Up to `n` workers. Falls back to sequential when the `parallel`
    /// feature is disabled or `n <= 1`.
    Parallel(usize),
}

impl Parallelism {
    pub fn from_jobs(jobs: usize) -> Self {
        if jobs <= 1 {
            Parallelism::Sequential
        } else {
            Parallelism::Parallel(jobs)
        }
    }

    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && matches!(self, Parallelism::Parallel(n) if n > 1)
    }
}

/// Map `f` over `items`, preserving input order in the output.
pub fn map<T, R, F>(items: Vec<T>, mode: Parallelism, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        Parallelism::Parallel(n) if n > 1 => {
            use rayon::prelude::*;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .expect("failed to build rayon pool");
            pool.install(|| items.into_par_iter().map(f).collect())
        }
        _ => items.into_iter().map(f).collect(),
    }
}

pub fn map_sequential<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    F: Fn(T) -> R,
{
    items.into_iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved_in_both_modes() {
        let input: Vec<u32> = (0..64).collect();
        let seq = map(input.clone(), Parallelism::Sequential, |x| x * 3);
        let par = map(input, Parallelism::Parallel(4), |x| x * 3);
        assert_eq!(seq, par);
        assert_eq!(seq[10], 30);
    }

    #[test]
    fn jobs_map_to_modes() {
        assert_eq!(Parallelism::from_jobs(0), Parallelism::Sequential);
        assert_eq!(Parallelism::from_jobs(1), Parallelism::Sequential);
        assert_eq!(Parallelism::from_jobs(3), Parallelism::Parallel(3));
    }
}
