import math

import numpy as np
import pytest
from hypothesis import strategies as st

from decodekit.seqmodel import TableModel, Vocabulary


def random_table_model(rng: np.random.Generator, n_words: int, max_len: int, forced_eos: bool = True, sparsity=0.0):
    """Full-tree TableModel over ``n_words`` content tokens.

    Every prefix up to ``max_len - 1`` generated tokens gets a Dirichlet
    distribution; with ``forced_eos`` the last step puts all mass on EOS so
    every path terminates within the budget.
    """
    words = [chr(ord("a") + i) for i in range(n_words)]
    vocab = Vocabulary.build(words)
    entries = {}

    def fill(prefix):
        depth = len(prefix) - 1
        probs = np.zeros(len(vocab))
        if forced_eos and depth == max_len - 1:
            probs[vocab.eos_id] = 1.0
        else:
            live = [vocab.eos_id] + [vocab.id(w) for w in words]
            w = rng.dirichlet(np.ones(len(live)))
            if sparsity:
                w[rng.random(len(live)) < sparsity] = 0.0
                if w.sum() == 0:
                    w[0] = 1.0
                w /= w.sum()
            probs[live] = w
            probs[int(np.argmax(probs))] += 1.0 - probs.sum()
        entries[((), prefix)] = probs
        if depth + 1 < max_len:
            for tok in np.flatnonzero(probs > 0).tolist():
                if tok != vocab.eos_id:
                    fill(prefix + (tok,))

    fill((vocab.bos_id,))
    return TableModel(vocab, entries)


@pytest.fixture
def abc_vocab():
    return Vocabulary.build(["a", "b", "c"])


def forced_model(vocab, path, default=None):
    """Table model that emits ``path`` then EOS with probability 1.

    ``default`` scores prefixes off the path when given.
    """
    entries = {}
    for i in range(len(path) + 1):
        nxt = path[i] if i < len(path) else vocab.eos
        entries[tuple(path[:i])] = {nxt: 1.0}
    return TableModel.from_prefixes(vocab, {(vocab.bos,) + k: v for k, v in entries.items()}, default)


probability_vectors = st.lists(st.floats(0.0, 1.0, allow_nan=False), min_size=2, max_size=12).filter(
    lambda xs: sum(xs) > 1e-6
).map(lambda xs: np.array(xs) / math.fsum(xs))


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
