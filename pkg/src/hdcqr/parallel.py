"""Order-preserving process-pool map.

Jobs must draw all randomness from :mod:`hdcqr.rng` keyed by their own
indices; results are returned in submission order, so output does not
depend on the worker count.
"""

import multiprocessing as mp
from concurrent.futures import ProcessPoolExecutor


def map_jobs(fn, jobs, threads=1):
    jobs = list(jobs)
    if threads is None or threads <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    ctx = mp.get_context("fork")
    with ProcessPoolExecutor(max_workers=int(threads), mp_context=ctx) as ex:
        return list(ex.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * int(threads)))))
