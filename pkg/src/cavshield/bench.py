"""Benchmark the compiled kernels against the pure-Python fallback."""

import time

import numpy as np

from .kernels import available_backends, get_backend


def _qp_cases(n, rng):
    cases = []
    for _ in range(n):
        u0 = rng.uniform(-3, 3, 2)
        rows = [
            (rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 1))
            for _ in range(rng.integers(1, 7))
        ]
        cases.append((u0[0], u0[1], rows))
    return cases


def _time_qp(backend, cases):
    start = time.perf_counter()
    for u0x, u0y, rows in cases:
        backend.solve_qp_2d(u0x, u0y, rows, -6.0, 4.0, -0.5, 0.5)
    return time.perf_counter() - start


def _time_bicycle(backend, n):
    start = time.perf_counter()
    x = y = psi = 0.0
    v = 10.0
    for _ in range(n):
        x, y, v, psi = backend.step_bicycle(x, y, v, psi, 0.5, 0.01, 0.05, 1.35, 2.7)
    return time.perf_counter() - start


def _time_overlap(backend, cases):
    start = time.perf_counter()
    for a, b in cases:
        backend.rect_overlap(*a, *b)
    return time.perf_counter() - start


def run_benchmark(repeat=20000, seed=0):
    """Per-kernel wall times for every available backend."""
    rng = np.random.default_rng(seed)
    qp_cases = _qp_cases(min(repeat, 5000), rng)
    rect_cases = [
        (
            (rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-3, 3), 4.5, 2.0),
            (rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-3, 3), 4.5, 2.0),
        )
        for _ in range(min(repeat, 5000))
    ]
    lines = [f"kernel benchmark (qp x{len(qp_cases)}, bicycle x{repeat}, "
             f"overlap x{len(rect_cases)})"]
    rows = []
    for name in available_backends():
        backend = get_backend(name)
        rows.append(
            (
                name,
                _time_qp(backend, qp_cases),
                _time_bicycle(backend, repeat),
                _time_overlap(backend, rect_cases),
            )
        )
    lines.append(f"{'backend':<10}{'qp [s]':>12}{'bicycle [s]':>14}{'overlap [s]':>14}")
    for name, tq, tb, to in rows:
        lines.append(f"{name:<10}{tq:>12.4f}{tb:>14.4f}{to:>14.4f}")
    if len(rows) == 2:
        base = dict((r[0], r[1:]) for r in rows)
        py = base["python"]
        cy = base["compiled"]
        speedups = [p / c if c > 0 else float("inf") for p, c in zip(py, cy)]
        lines.append(
            "speedup   "
            + "".join(f"{s:>12.1f}x" if i == 0 else f"{s:>13.1f}x"
                      for i, s in enumerate(speedups))
        )
    return "\n".join(lines)
