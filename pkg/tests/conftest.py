import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from textrec import kernels
from textrec.data import InteractionDataset, ProfileSet

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

BACKENDS = ["python"] + (["cython"] if kernels.BACKEND == "cython" else [])


@pytest.fixture(params=BACKENDS)
def kernel_backend(request, monkeypatch):
    """Route the ranking kernels through one backend for the duration of a test."""
    mod = kernels.get_backend(request.param)
    monkeypatch.setattr(kernels, "topk_excluding", mod.topk_excluding)
    monkeypatch.setattr(kernels, "rank_metrics", mod.rank_metrics)
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_random_dataset(rng, n_users=30, n_items=60, per_user=(3, 12)):
    users = [f"u{n:03d}" for n in range(n_users)]
    items = [f"i{n:03d}" for n in range(n_items)]
    train, val, test = [], [], []
    for u in users:
        k = int(rng.integers(per_user[0], per_user[1] + 1))
        picks = rng.choice(n_items, size=k, replace=False)
        for j, p in enumerate(picks):
            (train if j < k - 2 else val if j == k - 2 else test).append((u, items[p]))
    return InteractionDataset(users, items, train, val, test)


def make_profiles(ids, t, rng, words=("red", "blue", "green", "fast", "slow", "cheap", "big", "small")):
    return {e: ProfileSet(e, [" ".join(rng.choice(words, size=5)) for _ in range(t + 1)]) for e in ids}


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
