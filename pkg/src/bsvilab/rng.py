"""Reproducible random streams built on the counter-based Philox generator.

Derivation rule (stable across releases, suitable for cross-language
re-implementation): the stream for a given role is Philox4x64 keyed with
the pair of 64-bit words ``(seed mod 2**64, namespace + index)``.  Draws
are taken sequentially from that stream, so the value consumed at step i
is the i-th variate of the keyed stream.  Namespaces keep independent
roles from colliding:

* paths:      key = (seed, PATH_NS + path_index), one stream per sample path
* auxiliary:  key = (seed, AUX_NS + role_index), verifier probes, sign draws

Everything downstream of a PathBundle is a pure function of these streams,
which is what makes re-runs byte-identical.
"""

import numpy as np

PATH_NS = 0
AUX_NS = 1 << 62

_MASK64 = (1 << 64) - 1


def keyed_stream(seed: int, index: int) -> np.random.Generator:
    """Generator for the Philox stream keyed by (seed, index)."""
    key = np.array([seed & _MASK64, index & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def path_stream(seed: int, path_index: int) -> np.random.Generator:
    return keyed_stream(seed, PATH_NS + path_index)


def aux_stream(seed: int, role_index: int) -> np.random.Generator:
    return keyed_stream(seed, AUX_NS + role_index)


def gaussian_increments(seed: int, n_paths: int, dt: np.ndarray) -> np.ndarray:
    """Brownian increments, shape (n_paths, len(dt)), one stream per path."""
    sqdt = np.sqrt(np.asarray(dt, dtype=float))
    out = np.empty((n_paths, sqdt.size))
    for p in range(n_paths):
        out[p] = path_stream(seed, p).standard_normal(sqdt.size) * sqdt
    return out


def sign_paths(seed: int, n_paths: int, n_steps: int) -> np.ndarray:
    """Fair up/down indicators in {0, 1}, shape (n_paths, n_steps)."""
    out = np.empty((n_paths, n_steps), dtype=np.int64)
    for p in range(n_paths):
        out[p] = path_stream(seed, p).integers(0, 2, size=n_steps)
    return out
