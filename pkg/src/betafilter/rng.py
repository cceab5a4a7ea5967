"""Deterministic random-stream derivation.

All randomness in the package flows through named Philox substreams derived
from integer seeds, so that results are bit-reproducible for a given seed and
do not depend on execution order or worker count.

Substream layout
----------------
- ``stream(seed, *path)`` returns a counter-based generator keyed by
  ``SeedSequence(seed, spawn_key=path)``.
- Filters use one substream per (time step, purpose) pair. Purposes:
  ``INIT`` (prior draw), ``PROPOSAL`` (transition/proposal noise at step t),
  ``RESAMPLE`` (ancestor selection at step t), ``PREDICTIVE`` (observation
  replicates at step t), ``SMOOTHER`` (backward draws).
- The experiment runner derives per-run integer seeds with
  ``derive_seed(base_seed, namespace, run_index)``; data generation and
  filter randomness live in separate namespaces so that deterministic
  baselines (Kalman) are unaffected by the filter seed.
"""

from __future__ import annotations

import numpy as np

# purpose codes for per-step substreams
INIT = 0
PROPOSAL = 1
RESAMPLE = 2
PREDICTIVE = 3
SMOOTHER = 4
AUXILIARY = 5

# namespaces for derive_seed
NS_DATA = 0
NS_FILTER = 1
NS_TUNING = 2


def stream(seed: int, *path: int) -> np.random.Generator:
    """Return the Philox generator for the named substream of ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=path)))


def derive_seed(seed: int, *path: int) -> int:
    """Derive a child integer seed; stable across platforms and processes."""
    return int(np.random.SeedSequence(seed, spawn_key=path).generate_state(1, np.uint64)[0])
