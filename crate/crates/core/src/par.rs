//! Switch between rayon and sequential iteration over fixed-size chunks.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

// Below this many elements the fork/join bookkeeping costs more than it saves.
#[cfg(feature = "parallel")]
const PAR_MIN_LEN: usize = 1 << 14;

pub(crate) fn for_each_chunk<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    if chunk == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    if rayon::current_num_threads() > 1 && data.len() >= PAR_MIN_LEN {
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(k, c)| f(k, c));
        return;
    }
    data.chunks_mut(chunk)
        .enumerate()
        .for_each(|(k, c)| f(k, c));
}
