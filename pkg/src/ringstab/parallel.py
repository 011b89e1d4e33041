"""Replication fan-out; results always come back in input order."""

import os
from concurrent.futures import ProcessPoolExecutor


def resolve_jobs(jobs=None):
    if jobs is None:
        jobs = int(os.environ.get("RINGSTAB_JOBS", "1"))
    return max(1, int(jobs))


def map_seeds(fn, items, jobs=1):
    items = list(items)
    jobs = resolve_jobs(jobs)
    if jobs == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(fn, items))
