"""Greedy and beam-search generation against the prompted model.

Beam search is length-unnormalized: hypotheses carry raw cumulative
log-probabilities, a hypothesis finishes when it emits EOS, and the best
finished hypothesis wins (best unfinished as fallback). Ties break toward
the lower token id, then the earlier beam slot, so decoding is fully
deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import EOS_ID, Document
from .model import BackboneParams, EncodedSource, PromptConfig, PromptSet, decode_logits, encode_source


@dataclass(frozen=True)
class Hypothesis:
    ids: tuple[int, ...]
    logp: float
    finished: bool


def _log_softmax(row: np.ndarray) -> np.ndarray:
    z = row - row.max()
    return z - np.log(np.exp(z).sum())


def _next_logprobs(
    backbone: BackboneParams,
    prompts: PromptSet,
    config: PromptConfig,
    enc: EncodedSource,
    prefix,
) -> np.ndarray:
    logits, _ = decode_logits(backbone, prompts, config, enc, prefix)
    return _log_softmax(logits.data[-1])


def greedy_decode(
    backbone: BackboneParams,
    prompts: PromptSet,
    config: PromptConfig,
    src: Document,
    max_len: int = 256,
) -> list[int]:
    """Argmax decoding; ties go to the lower token id. Stops at EOS or max_len."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    enc = encode_source(backbone, prompts, config, src)
    out: list[int] = []
    while len(out) < max_len:
        logprobs = _next_logprobs(backbone, prompts, config, enc, out)
        token = int(np.argmax(logprobs))
        out.append(token)
        if token == EOS_ID:
            break
    return out


def beam_search(
    backbone: BackboneParams,
    prompts: PromptSet,
    config: PromptConfig,
    src: Document,
    beam: int = 4,
    max_len: int = 256,
) -> list[int]:
    """Standard beam search over cumulative log-probability.

    With beam=1 this reproduces greedy_decode exactly. The search stops when
    every hypothesis has finished or reached max_len.
    """
    if beam < 1:
        raise ValueError("beam must be >= 1")
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    enc = encode_source(backbone, prompts, config, src)
    beams = [Hypothesis((), 0.0, False)]
    best_finished: Hypothesis | None = None

    while any(not h.finished and len(h.ids) < max_len for h in beams):
        # (hypothesis, logp, last token id, parent beam slot): the sort key
        # implements "lower token id, then earlier beam index" tie-breaking.
        candidates: list[tuple[Hypothesis, float, int, int]] = []
        for slot, hyp in enumerate(beams):
            if hyp.finished or len(hyp.ids) >= max_len:
                last = hyp.ids[-1] if hyp.ids else -1
                candidates.append((hyp, hyp.logp, last, slot))
                continue
            logprobs = _next_logprobs(backbone, prompts, config, enc, hyp.ids)
            for token, lp in enumerate(logprobs):
                candidates.append(
                    (
                        Hypothesis(hyp.ids + (token,), hyp.logp + float(lp), token == EOS_ID),
                        hyp.logp + float(lp),
                        token,
                        slot,
                    )
                )
        candidates.sort(key=lambda c: (-c[1], c[2], c[3]))
        beams = [c[0] for c in candidates[:beam]]
        # A finished hypothesis can later be crowded out of the beam by
        # longer partial hypotheses; remember the best one ever selected.
        for hyp in beams:
            if hyp.finished and (best_finished is None or hyp.logp > best_finished.logp):
                best_finished = hyp

    if best_finished is not None:
        return list(best_finished.ids)
    best = max(beams, key=lambda h: h.logp)
    return list(best.ids)


def sequence_logprob(
    backbone: BackboneParams,
    prompts: PromptSet,
    config: PromptConfig,
    src: Document,
    ids,
) -> float:
    """Cumulative log-probability of ``ids`` under the prompted model."""
    ids = list(ids)
    if not ids:
        raise ValueError("cannot score an empty sequence")
    enc = encode_source(backbone, prompts, config, src)
    logits, _ = decode_logits(backbone, prompts, config, enc, ids[:-1])
    total = 0.0
    for t, token in enumerate(ids):
        total += float(_log_softmax(logits.data[t])[token])
    return total
