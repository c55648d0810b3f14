"""Reward-model overoptimization lab.

Thin Python layer over the native core. Configs are plain dicts in the same
schema as the JSON files under ``configs/``.
"""

import json
import os

from . import _core
from ._core import (
    ConfigError,
    DomainError,
    FormatError,
    ShapeError,
    bon_rank_kl,
    bon_unbiased_curve,
    bon_weights,
    combine,
    intra_variance,
    kl_bon,
    plot_curves,
    read_summary,
)

__all__ = [
    "ConfigError",
    "DomainError",
    "FormatError",
    "ShapeError",
    "World",
    "bon_rank_kl",
    "bon_unbiased_curve",
    "bon_weights",
    "cell_hashes",
    "combine",
    "intra_variance",
    "kl_bon",
    "load_config",
    "plot_curves",
    "read_summary",
    "sweep",
    "winrate",
]


def load_config(path):
    with open(path) as f:
        return json.load(f)


def _text(config):
    return config if isinstance(config, str) else json.dumps(config)


def World(spec):
    """Build the synthetic world from a world-spec dict."""
    return _core.World(_text(spec))


def cell_hashes(config):
    return _core.cell_hashes(_text(config))


def sweep(config, out=None, parallelism=1, cell=""):
    """Run every cell and seed; returns {"ok", "summary_path", "records"}.

    The output root is ``out``, else $RMLAB_OUTPUT_ROOT, else the config's output_dir.
    """
    if out is None:
        out = os.environ.get("RMLAB_OUTPUT_ROOT") or (config.get("output_dir", "rmlab-out") if isinstance(config, dict) else "rmlab-out")
    return _core.run_sweep(_text(config), parallelism, os.fspath(out), cell)


def winrate(a, b):
    """Win-rate (percent) of per-prompt gold scores ``a`` over ``b``; each is {prompt_id: gold}."""
    ids_a, ids_b = sorted(a), sorted(b)
    return _core.winrate(ids_a, [a[i] for i in ids_a], ids_b, [b[i] for i in ids_b])
