"""Desk-scale experiment: mode-seeking vs sampling on a trigram reference LM.

Trains a trigram model on a synthetic corpus, decodes unconditional inputs
with all eight strategies through the harness and checks two directional
effects with bootstrap intervals over inputs/sets:

* mode-seeking outputs (greedy, beam, DBS) score a higher length-normalized
  log-probability than ancestral samples;
* beam sets are less diverse (higher self-BLEU) than ancestral sets of K=10.
"""

from __future__ import annotations

import math
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

from .analysis import bootstrap_diff_ci
from .corpus import write_corpus
from .harness import ExperimentConfig, read_generations, run_decode, run_train
from .metrics import collect_metric_sets, self_bleu
from .rng import derive_rng

MODE_SEEKING = ("greedy", "beam", "diverse_beam")


@dataclass
class Effect:
    name: str
    left: float
    right: float
    ci: tuple

    @property
    def difference(self) -> float:
        return self.left - self.right

    @property
    def holds(self) -> bool:
        return self.difference > 0 and self.ci[0] > 0

    def line(self) -> str:
        return (
            f"{self.name}: {self.left:.4f} vs {self.right:.4f} "
            f"(diff {self.difference:.4f}, 95% CI [{self.ci[0]:.4f}, {self.ci[1]:.4f}])"
        )


@dataclass
class DirectionalResult:
    corpus_bytes: int
    n_inputs: int
    n_records: int
    seconds: float
    effects: list = field(default_factory=list)

    @property
    def holds(self) -> bool:
        return all(e.holds for e in self.effects)


def _mean(xs) -> float:
    return math.fsum(xs) / len(xs)


def directional_experiment(
    workdir,
    n_inputs: int = 200,
    corpus_bytes: int = 1_200_000,
    smoothing_k: float = 0.05,
    seed: int = 0,
    resamples: int = 1000,
    workers: int = 1,
) -> DirectionalResult:
    start = time.perf_counter()
    workdir = Path(workdir)
    train_path = write_corpus(workdir / "train.txt", corpus_bytes)
    config = ExperimentConfig(
        task="unconditional",
        model_path=str(workdir / "lm.json"),
        num_inputs=n_inputs,
        output_dir=str(workdir / "run"),
        seed=seed,
        workers=workers,
        lm={"train_path": str(train_path), "order": 3, "smoothing_k": smoothing_k},
    )
    run_train(config)
    records = read_generations(run_decode(config))
    kinds = config.decoder_kinds

    # (a) per-input mean norm_log_prob, mode-seeking vs ancestral
    mode = defaultdict(list)
    anc = defaultdict(list)
    for r in records:
        if kinds[r.decoder] in MODE_SEEKING:
            mode[r.input_id].append(r.norm_log_prob)
        elif kinds[r.decoder] == "ancestral":
            anc[r.input_id].append(r.norm_log_prob)
    ids = sorted(mode)
    a = [_mean(mode[i]) for i in ids]
    b = [_mean(anc[i]) for i in ids]
    effects = [
        Effect(
            "norm_log_prob mode-seeking > ancestral",
            _mean(a),
            _mean(b),
            bootstrap_diff_ci(a, b, resamples, seed, paired=True),
        )
    ]

    # (b) self-BLEU of beam sets vs ancestral K=10 sets
    sets = collect_metric_sets(
        records, kinds, "unconditional", config.samples_per_input, derive_rng(seed, "__sets__", "pool", 0).generator()
    )
    sb = defaultdict(list)
    for s in sets:
        sb[s.decoder].append(self_bleu(s.members))
    ancestral = [d for d in sorted(kinds) if kinds[d] == "ancestral"][0]
    for dec in sorted(d for d in kinds if kinds[d] == "beam"):
        effects.append(
            Effect(
                f"self_bleu {dec} sets > {ancestral} sets",
                _mean(sb[dec]),
                _mean(sb[ancestral]),
                bootstrap_diff_ci(sb[dec], sb[ancestral], resamples, seed + 1, paired=False),
            )
        )
    return DirectionalResult(
        train_path.stat().st_size, n_inputs, len(records), time.perf_counter() - start, effects
    )
