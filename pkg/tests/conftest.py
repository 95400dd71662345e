"""Shared fixtures for the test suite."""

from __future__ import annotations

import contextlib

import numpy as np
import pytest

from routinesig.config import RunConfig
from routinesig.synth import CohortSpec, generate_cohort


@pytest.fixture
def criterion(capsys):
    """Context manager that prints one visible PASS/FAIL line per criterion.

    The line bypasses pytest's capture so the verdicts appear inline in
    the terminal run, and the original assertion error still propagates.
    """
    @contextlib.contextmanager
    def check(name: str):
        ok = False
        try:
            yield
            ok = True
        finally:
            with capsys.disabled():
                print(f"\n[{name}] {'PASS' if ok else 'FAIL'}")
    return check


@pytest.fixture(scope="session")
def small_cohort():
    """A quick 12-participant cohort reused by pipeline-level tests."""
    spec = CohortSpec(n_participants=12, n_days=40, k=3, separation=2.5,
                      weight_concentration=5.0, seed=7)
    return generate_cohort(spec)


@pytest.fixture
def quick_config():
    return RunConfig(seed=7, pin_k=3, structures=["full"], n_restarts=1,
                     segment_days=[14, 7], metrics=["jsd", "cosine"])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
