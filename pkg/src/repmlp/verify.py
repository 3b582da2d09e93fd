"""Equivalence verification: config grids, per-config seeding, reports.

A grid cell is one block config. For each cell we draw weights and an
input from a seed derived from the base seed and the config string, run
the training-form forward, convert, run the collapsed forward, and record
the max absolute difference. Reports carry no timings and are rendered in
grid order, so a (grid, seed, dtype, tolerance) quadruple always produces
byte-identical text regardless of thread count.
"""

from __future__ import annotations

import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .block import RepMLPConfig, forward_train, random_train_weights
from .reparam import convert_block, forward_infer
from .tensor import ShapeError

DEFAULT_TOLERANCES = {"f32": 1e-4, "f64": 1e-9}
DTYPES = {"f32": np.float32, "f64": np.float64}

# cycled per grid cell; entries are pruned to kernels that fit the tile
_BRANCH_CYCLE = ((), (1,), (3,), (1, 3), (1, 3, 5), (5,), (1, 3, 5, 7),
                 (3, 7), (1, 5), (7,))
_PART_MULTIPLIERS = ((1, 1), (2, 2), (3, 3), (1, 2), (2, 1), (2, 3), (3, 2),
                     (1, 3), (3, 1))


def thread_count() -> int:
    """Worker cap from REPMLP_THREADS; defaults to single-threaded."""
    raw = os.environ.get("REPMLP_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ShapeError(f"REPMLP_THREADS must be an integer, got {raw!r}") from exc
    if n < 1:
        raise ShapeError("REPMLP_THREADS must be >= 1")
    return n


def format_config(cfg: RepMLPConfig) -> str:
    ks = "-".join(str(k) for k in cfg.branch_kernels) or "none"
    text = (f"C={cfg.in_channels},O={cfg.out_channels},"
            f"H={cfg.height},W={cfg.width},h={cfg.part_h},w={cfg.part_w},"
            f"g={cfg.groups},ks={ks}")
    if cfg.gp_internal_dim is not None:
        text += f",gp={cfg.gp_internal_dim}"
    if cfg.gp_nonlinearity != "relu":
        text += f",nl={cfg.gp_nonlinearity}"
    return text


def parse_config(text: str) -> RepMLPConfig:
    """Inverse of format_config; raises ShapeError on malformed strings."""
    fields: dict[str, str] = {}
    for item in text.split(","):
        if "=" not in item:
            raise ShapeError(f"bad config item {item!r} (expected key=value)")
        key, _, value = item.partition("=")
        if key in fields:
            raise ShapeError(f"duplicate config key {key!r}")
        fields[key] = value
    required = ("C", "O", "H", "W", "h", "w", "g")
    missing = [k for k in required if k not in fields]
    if missing:
        raise ShapeError(f"config string missing keys: {', '.join(missing)}")
    known = set(required) | {"ks", "gp", "nl"}
    unknown = set(fields) - known
    if unknown:
        raise ShapeError(f"unknown config keys: {', '.join(sorted(unknown))}")

    def as_int(key, value):
        try:
            return int(value)
        except ValueError as exc:
            raise ShapeError(f"config key {key} must be an integer, got {value!r}") from exc

    nums = {k: as_int(k, fields[k]) for k in required}
    ks_text = fields.get("ks", "none")
    if ks_text in ("none", ""):
        kernels: tuple[int, ...] = ()
    else:
        kernels = tuple(as_int("ks", part) for part in ks_text.split("-"))
    gp = as_int("gp", fields["gp"]) if "gp" in fields else None
    return RepMLPConfig(
        in_channels=nums["C"], out_channels=nums["O"],
        height=nums["H"], width=nums["W"], part_h=nums["h"], part_w=nums["w"],
        groups=nums["g"], branch_kernels=kernels, gp_internal_dim=gp,
        gp_nonlinearity=fields.get("nl", "relu"))


def full_grid() -> tuple[RepMLPConfig, ...]:
    """Cross of channels x tile sizes x valid groups x partition counts,
    with branch sets cycled deterministically across cells."""
    cells = []
    index = 0
    for c in (2, 4, 8):
        for o in (2, 4, 8):
            for h in (4, 6, 7):
                for w in (4, 6, 7):
                    for g in (1, 2, 4):
                        if c % g or o % g:
                            continue
                        for mh, mw in _PART_MULTIPLIERS:
                            ks = tuple(k for k in _BRANCH_CYCLE[index % len(_BRANCH_CYCLE)]
                                       if k <= min(h, w))
                            cells.append(RepMLPConfig(
                                in_channels=c, out_channels=o,
                                height=h * mh, width=w * mw,
                                part_h=h, part_w=w, groups=g,
                                branch_kernels=ks))
                            index += 1
    return tuple(cells)


def build_grid(name: str) -> tuple[RepMLPConfig, ...]:
    grid = full_grid()
    if name == "full":
        return grid
    if name == "default":
        return grid[::3]
    if name == "quick":
        return grid[::27]
    raise ShapeError(f"unknown grid {name!r} (choose default, full, or quick)")


@dataclass(frozen=True)
class CellResult:
    config: str
    max_diff: float
    ok: bool


def cell_rng(base_seed: int, config_text: str) -> np.random.Generator:
    """Per-cell stream: stable under grid reordering and thread count."""
    crc = zlib.crc32(config_text.encode("ascii"))
    return np.random.default_rng(np.random.SeedSequence([base_seed, crc]))


def check_cell(cfg: RepMLPConfig, base_seed: int, dtype, tolerance: float,
               batch: int = 2) -> CellResult:
    text = format_config(cfg)
    rng = cell_rng(base_seed, text)
    dt = np.dtype(dtype).type
    weights = random_train_weights(cfg, rng, dt)
    x = rng.uniform(-1.0, 1.0,
                    (batch, cfg.in_channels, cfg.height, cfg.width)).astype(dt)
    reference = forward_train(x, cfg, weights)
    collapsed = convert_block(cfg, weights)
    replayed = forward_infer(x, cfg, collapsed)
    diff = float(np.abs(reference - replayed).max())
    return CellResult(config=text, max_diff=diff, ok=diff <= tolerance)


def run_equivalence(configs, base_seed: int, precision: str, tolerance: float | None = None,
                    batch: int = 2, threads: int | None = None) -> tuple[str, bool]:
    """Run the grid and render the report. Returns (report text, all ok)."""
    if precision not in DTYPES:
        raise ShapeError(f"unknown precision {precision!r} (choose f32 or f64)")
    dtype = DTYPES[precision]
    tol = DEFAULT_TOLERANCES[precision] if tolerance is None else float(tolerance)
    if tol < 0:
        raise ShapeError("tolerance must be >= 0")
    workers = thread_count() if threads is None else threads

    def work(cfg):
        return check_cell(cfg, base_seed, dtype, tol, batch)

    if workers == 1:
        results = [work(cfg) for cfg in configs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, configs))  # submission order

    lines = [f"equivalence precision={precision} tol={tol:.3e} seed={base_seed} "
             f"batch={batch} configs={len(results)}"]
    for r in results:
        verdict = "ok" if r.ok else "FAIL"
        lines.append(f"  {r.config} diff={r.max_diff:.3e} {verdict}")
    failures = sum(1 for r in results if not r.ok)
    worst = max((r.max_diff for r in results), default=0.0)
    outcome = "PASS" if failures == 0 else "FAIL"
    lines.append(f"result={outcome} failures={failures} worst={worst:.3e}")
    return "\n".join(lines) + "\n", failures == 0
