"""Synthetic fixtures for gradient checks and the direction oracle."""

import numpy as np

from pelt.corpus import Occurrence, OccurrenceSet
from pelt.model import Checkpoint, ModelConfig, init_params
from pelt.vocab import MASK_ID


def synthetic_checkpoint(dim=32, layers=2, heads=4, vocab_size=512, max_len=32,
                         seed=0, dtype=np.float64):
    cfg = ModelConfig(dim=dim, layers=layers, heads=heads, max_len=max_len,
                      vocab_size=vocab_size, seed=seed)
    return Checkpoint(cfg, init_params(cfg, dtype))


def synthetic_mlm_batch(vocab_size, batch=4, length=12, masks_per_row=2, seed=0):
    """Random token rows with ``masks_per_row`` masked positions each."""
    rng = np.random.default_rng(seed)
    tokens = rng.integers(5, vocab_size, size=(batch, length))
    targets = np.full((batch, length), -1, dtype=np.int64)
    for row in range(batch):
        picks = rng.choice(length, size=masks_per_row, replace=False)
        targets[row, picks] = tokens[row, picks]
        tokens[row, picks] = MASK_ID
    return tokens, targets


def synthetic_occurrence_set(vocab_size, occurrences=12, length=10, seed=0,
                             entity_id="synthetic"):
    """Random context sentences, each with one MASK at a random position."""
    rng = np.random.default_rng(seed)
    items = []
    for _ in range(occurrences):
        toks = rng.integers(5, vocab_size, size=length).tolist()
        pos = int(rng.integers(length))
        toks[pos] = MASK_ID
        items.append(Occurrence(tuple(toks), pos))
    return OccurrenceSet(entity_id, tuple(items), "synthetic")
