"""Finite synthetic (B, R, Y) processes with exactly enumerable conditional information.

Triples are rendered as text so the whole pipeline runs on them: `b` becomes the baseline
sentence `"the context is b{i}"`, `r` the rationale `"the evidence is r{j}"` and `y` the
label `"y{k}"`.
"""

from __future__ import annotations

import json
import logging
import math
import re
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
from scipy.stats import entropy

from rationale_eval.config import write_json_atomic
from rationale_eval.corpus import (
    CQAInput,
    Example,
    RationaleLabelPair,
    Setting,
    Source,
    Task,
)
from rationale_eval.errors import InvalidConfig, UnknownLabel
from rationale_eval.scorer import ConditionalLabelScorer, ScoringContext

logger = logging.getLogger(__name__)

MAX_ALPHABET = 16
SUM_TOLERANCE = 1e-12
_B_RE = re.compile(r"\bb(\d+)\b")
_R_RE = re.compile(r"\br(\d+)\b")
_Y_RE = re.compile(r"^y(\d+)$")


def render_b(b: int) -> str:
    return f"the context is b{b}"


def render_r(r: int) -> str:
    return f"the evidence is r{r}"


def render_y(y: int) -> str:
    return f"y{y}"


@dataclass(frozen=True, eq=False)
class SyntheticConfig:
    """Joint table `P[b, r, y]`."""

    name: str
    table: np.ndarray

    def __post_init__(self) -> None:
        table = np.array(self.table, dtype=float)
        if table.ndim != 3:
            raise InvalidConfig(f"[synth] {self.name}: table must be 3-dimensional (B, R, Y)")
        if any(size < 1 or size > MAX_ALPHABET for size in table.shape):
            raise InvalidConfig(
                f"[synth] {self.name}: alphabet sizes must be in 1..{MAX_ALPHABET}, "
                f"got {table.shape}"
            )
        if not np.all(np.isfinite(table)) or np.any(table < 0):
            raise InvalidConfig(f"[synth] {self.name}: table entries must be finite and >= 0")
        total = math.fsum(table.ravel())
        if abs(total - 1.0) > SUM_TOLERANCE:
            raise InvalidConfig(f"[synth] {self.name}: table sums to {total!r}, expected 1")
        if np.any(table.sum(axis=(1, 2)) <= 0):
            raise InvalidConfig(f"[synth] {self.name}: every P(B=b) must be positive")
        table.setflags(write=False)
        object.__setattr__(self, "table", table)

    @property
    def sizes(self) -> tuple[int, int, int]:
        b, r, y = self.table.shape
        return b, r, y

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(render_y(k) for k in range(self.sizes[2]))

    def p_b(self) -> np.ndarray:
        return self.table.sum(axis=(1, 2))

    def p_by(self) -> np.ndarray:
        return self.table.sum(axis=1)

    def p_br(self) -> np.ndarray:
        return self.table.sum(axis=2)

    def to_dict(self) -> dict[str, Any]:
        b, r, y = self.sizes
        return {
            "name": self.name,
            "sizes": {"b": b, "r": r, "y": y},
            "table": self.table.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> SyntheticConfig:
        try:
            name = str(data["name"])
            table = np.array(data["table"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidConfig(f"[synth] malformed synthetic config: {exc}") from exc
        sizes = data.get("sizes")
        if sizes is not None and tuple(table.shape) != (sizes["b"], sizes["r"], sizes["y"]):
            raise InvalidConfig(f"[synth] {name}: table shape {table.shape} disagrees with sizes")
        return cls(name, table)


def load_synthetic_config(path: Path) -> SyntheticConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Synthetic config does not exist: {path}")
    return SyntheticConfig.from_dict(json.loads(path.read_text(encoding="utf-8")))


def save_synthetic_config(cfg: SyntheticConfig, path: Path) -> None:
    write_json_atomic(Path(path), cfg.to_dict())


def copy_channel_config() -> SyntheticConfig:
    """Y uniform over two labels, R copies Y, B constant."""
    table = np.zeros((1, 2, 2))
    table[0, 0, 0] = 0.5
    table[0, 1, 1] = 0.5
    return SyntheticConfig("c_copy", table)


def independent_config(
    p_by: np.ndarray, p_r: np.ndarray, name: str = "c_indep"
) -> SyntheticConfig:
    """R drawn independently of (Y, B)."""
    p_by = np.asarray(p_by, dtype=float)
    p_r = np.asarray(p_r, dtype=float)
    table = p_by[:, None, :] * p_r[None, :, None]
    return SyntheticConfig(name, table / table.sum())


def degradation_suite(base: SyntheticConfig, weights: Sequence[float]) -> list[SyntheticConfig]:
    """Mix the rationale channel `R | Y, B` with `R | B`.

    Weight 0 is the base config and weight 1 carries no information about Y beyond B; the
    P(b, r) marginal is unchanged and the conditional information strictly decreases in the
    weight whenever the base carries any.
    """
    table = base.table
    p_by = base.p_by()
    p_b = base.p_b()
    with np.errstate(divide="ignore", invalid="ignore"):
        r_given_by = np.where(p_by[:, None, :] > 0, table / p_by[:, None, :], 0.0)
    r_given_b = base.p_br() / p_b[:, None]
    configs = []
    for weight in weights:
        if not 0.0 <= weight <= 1.0:
            raise InvalidConfig(f"[synth] degradation weight must be in [0, 1], got {weight}")
        # Rows with P(b, y) = 0 contribute nothing, so their channel is irrelevant.
        channel = (1.0 - weight) * r_given_by + weight * r_given_b[:, :, None]
        mixed = p_by[:, None, :] * channel
        configs.append(SyntheticConfig(f"{base.name}@{weight:g}", mixed / math.fsum(mixed.ravel())))
    return configs


@dataclass(frozen=True)
class SyntheticTriple:
    b: int
    r: int
    y: int

    @property
    def baseline_text(self) -> str:
        return render_b(self.b)

    @property
    def rationale_text(self) -> str:
        return render_r(self.r)

    @property
    def label(self) -> str:
        return render_y(self.y)


def sample_synthetic(cfg: SyntheticConfig, n: int, seed: int = 0) -> list[SyntheticTriple]:
    if n < 1:
        raise InvalidConfig(f"[synth] sample size must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    flat = cfg.table.ravel()
    draws = rng.choice(flat.size, size=n, p=flat / flat.sum())
    bs, rs, ys = np.unravel_index(draws, cfg.table.shape)
    return [SyntheticTriple(int(b), int(r), int(y)) for b, r, y in zip(bs, rs, ys)]


def empirical_joint(triples: Sequence[SyntheticTriple], cfg: SyntheticConfig) -> np.ndarray:
    counts = np.zeros(cfg.table.shape)
    for triple in triples:
        counts[triple.b, triple.r, triple.y] += 1
    return counts / max(len(triples), 1)


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def exact_cmi(cfg: SyntheticConfig) -> float:
    """I(Y; R | B) as a sum of P(b,r,y) ln[P(y|r,b) / P(y|b)] over the support, in nats."""
    p_b = cfg.p_b()
    p_by = cfg.p_by()
    p_br = cfg.p_br()
    n_b, n_r, n_y = cfg.sizes
    terms = []
    for b in range(n_b):
        for r in range(n_r):
            for y in range(n_y):
                p = cfg.table[b, r, y]
                if p <= 0:
                    continue
                posterior_with = p / p_br[b, r]
                posterior_without = p_by[b, y] / p_b[b]
                terms.append(p * math.log(posterior_with / posterior_without))
    value = math.fsum(terms)
    return 0.0 if -1e-12 < value < 0 else value


def exact_conditional_entropy(cfg: SyntheticConfig, given_rationale: bool) -> float:
    """H(Y | R, B) when `given_rationale`, else H(Y | B), in nats."""
    if given_rationale:
        weights = cfg.p_br().ravel()
        rows = cfg.table.reshape(-1, cfg.sizes[2])
    else:
        weights = cfg.p_b()
        rows = cfg.p_by()
    return math.fsum(
        float(w) * float(entropy(row / w)) for w, row in zip(weights, rows) if w > 0
    )


def exact_cmi_from_entropies(cfg: SyntheticConfig) -> float:
    return exact_conditional_entropy(cfg, False) - exact_conditional_entropy(cfg, True)


def _index(pattern: re.Pattern[str], text: str | None, limit: int) -> int | None:
    if not text:
        return None
    match = pattern.search(text)
    if match is None:
        return None
    value = int(match.group(1))
    return value if value < limit else None


class ExactBayesScorer(ConditionalLabelScorer):
    """True posteriors P(y|b) and P(y|r,b) read off the joint table."""

    family_id = "exact-bayes"

    def __init__(self, cfg: SyntheticConfig):
        self.cfg = cfg
        self.training_fingerprint = f"exact:{cfg.name}"
        self._post_b = cfg.p_by() / cfg.p_b()[:, None]
        p_br = cfg.p_br()
        with np.errstate(divide="ignore", invalid="ignore"):
            self._post_br = np.where(
                p_br[:, :, None] > 0, cfg.table / p_br[:, :, None], np.nan
            )

    def posterior(self, b: int, r: int | None) -> np.ndarray:
        if r is not None and not np.isnan(self._post_br[b, r, 0]):
            return self._post_br[b, r]
        if r is not None:
            logger.debug("context (b%d, r%d) has zero probability; using P(y|b)", b, r)
        return self._post_b[b]

    def candidate_log_scores(self, ctx: ScoringContext) -> np.ndarray:
        n_b, n_r, n_y = self.cfg.sizes
        baseline = ctx.baseline.text if ctx.baseline is not None else ctx.input_text
        b = _index(_B_RE, baseline, n_b)
        if b is None:
            raise InvalidConfig(f"[synth] no b-token in context baseline {baseline!r}")
        r = _index(_R_RE, ctx.rationale, n_r)
        posterior = self.posterior(b, r)
        scores = []
        for candidate in ctx.candidates:
            match = _Y_RE.match(candidate)
            if match is None or int(match.group(1)) >= n_y:
                raise UnknownLabel(f"[synth] {candidate!r} is not a label of {self.cfg.name}")
            scores.append(posterior[int(match.group(1))])
        with np.errstate(divide="ignore"):
            return np.log(np.asarray(scores, dtype=float))

    def to_dict(self) -> dict[str, Any]:
        return {
            "family_id": self.family_id,
            "config": self.cfg.to_dict(),
            "training_fingerprint": self.training_fingerprint,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ExactBayesScorer:
        return cls(SyntheticConfig.from_dict(data["config"]))


def exact_bayes_scorer(cfg: SyntheticConfig) -> ExactBayesScorer:
    return ExactBayesScorer(cfg)


def synthetic_examples(
    triples: Sequence[SyntheticTriple],
    cfg: SyntheticConfig,
    setting: Setting = Setting.GOLD,
    id_prefix: str = "synth",
) -> tuple[list[Example], list[RationaleLabelPair]]:
    """Render triples as CQA examples (question = baseline sentence) and their pairs."""
    labels = cfg.labels
    examples: list[Example] = []
    pairs: list[RationaleLabelPair] = []
    for idx, triple in enumerate(triples):
        example_id = f"{id_prefix}-{idx}"
        examples.append(
            Example(
                id=example_id,
                task=Task.CQA,
                input=CQAInput(triple.baseline_text, labels),
                gold_label=triple.label,
                gold_rationale=triple.rationale_text,
                source=Source.GOLD,
            )
        )
        pairs.append(RationaleLabelPair(example_id, triple.label, triple.rationale_text, setting))
    return examples, pairs
