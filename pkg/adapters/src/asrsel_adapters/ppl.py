"""Perplexity adapter: fills the ppl field of a hypothesis file.

The built-in "builtin:en" model is a character-frequency language model
over lowercase letters and space (other characters share one bucket);
perplexity is exp of the mean negative log probability.  Crude but
deterministic and model-free.  "file:<path>" loads a JSON map of
character weights instead.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

from .wire import iter_jsonl, write_hypotheses

# Relative letter frequencies for English text plus a space weight; the
# exact numbers only need to be fixed, not precise.
_EN_WEIGHTS = {
    "a": 8.17, "b": 1.49, "c": 2.78, "d": 4.25, "e": 12.70, "f": 2.23,
    "g": 2.02, "h": 6.09, "i": 6.97, "j": 0.15, "k": 0.77, "l": 4.03,
    "m": 2.41, "n": 6.75, "o": 7.51, "p": 1.93, "q": 0.10, "r": 5.99,
    "s": 6.33, "t": 9.06, "u": 2.76, "v": 0.98, "w": 2.36, "x": 0.15,
    "y": 1.97, "z": 0.07, " ": 18.0,
}
_OTHER_KEY = "\x00"
_OTHER_WEIGHT = 0.5


class CharLm:
    def __init__(self, weights: dict[str, float]):
        table = dict(weights)
        table.setdefault(_OTHER_KEY, _OTHER_WEIGHT)
        total = sum(table.values())
        self.logp = {ch: math.log(w / total) for ch, w in table.items()}

    def perplexity(self, text: str) -> float:
        if not text.strip():
            raise ValueError("empty text")
        logs = [self.logp.get(ch, self.logp[_OTHER_KEY]) for ch in text.lower()]
        return math.exp(-sum(logs) / len(logs))


def get_lm(lm_id: str) -> CharLm:
    name, _, arg = lm_id.partition(":")
    if name == "builtin":
        if arg not in ("", "en"):
            raise ValueError("unknown builtin language model %r" % (arg,))
        return CharLm(_EN_WEIGHTS)
    if name == "file":
        weights = json.loads(Path(arg).read_text(encoding="utf-8"))
        return CharLm({str(k): float(v) for k, v in weights.items()})
    raise ValueError("unknown language-model id %r" % (lm_id,))


def ppl_score(hyps_path: str | Path, lm_id: str, out_path: str | Path) -> int:
    """Copy a hypothesis file with per-hypothesis perplexity filled in."""
    lm = get_lm(lm_id)
    rows = []
    for row in iter_jsonl(hyps_path):
        try:
            row = dict(row, ppl=lm.perplexity(row["text"]))
        except ValueError:
            raise ValueError(
                "empty text for (%s, %s)" % (row.get("utt_id"), row.get("hyp_id"))
            ) from None
        rows.append(row)
    return write_hypotheses(out_path, rows)
