"""Task-model adapters that produce rationale-label pairs, plus inference-time embedding noise.

Backends speak text in, text out. The local `StubBackend` is a deterministic stand-in for a
fine-tuned task model: it reads the answer key, embeds input tokens as seeded vectors and
degrades its output as the Gaussian noise added to those vectors grows.
"""

from __future__ import annotations

import logging
import math
import re
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from enum import StrEnum
from typing import Any, Protocol

import numpy as np

from rationale_eval.config import stable_hash
from rationale_eval.corpus import (
    DEFAULT_EOS,
    NLI_LABELS,
    Example,
    RationaleLabelPair,
    Setting,
    serialize_input,
    split_target,
)
from rationale_eval.errors import (
    BackendUnavailable,
    HookUnsupported,
    InvalidConfig,
    UnparseableGeneration,
)
from rationale_eval.protocol import CommandClient

logger = logging.getLogger(__name__)

_SPECIAL_TOKEN_RE = re.compile(r"^\[[a-z]+\]$")
_WORD_RE = re.compile(r"\w+")
NOISE_GRID = (0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0)


class NoiseTarget(StrEnum):
    INPUT_EMBEDDINGS = "INPUT_EMBEDDINGS"


@dataclass(frozen=True)
class DecodeConfig:
    max_length: int = 128
    temperature: float = 0.0
    seed: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {"max_length": self.max_length, "temperature": self.temperature, "seed": self.seed}


@dataclass(frozen=True)
class PerturbationConfig:
    sigma_squared: float
    seed: int = 0
    target: NoiseTarget = NoiseTarget.INPUT_EMBEDDINGS
    perturb_special_tokens: bool = True

    def __post_init__(self) -> None:
        if not math.isfinite(self.sigma_squared) or self.sigma_squared < 0:
            raise InvalidConfig(f"[noise] sigma_squared must be >= 0, got {self.sigma_squared}")

    @property
    def is_noop(self) -> bool:
        return self.sigma_squared == 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "sigma_squared": self.sigma_squared,
            "seed": self.seed,
            "target": self.target.value,
            "perturb_special_tokens": self.perturb_special_tokens,
        }


def draw_embedding_noise(
    n_positions: int, dim: int, sigma_squared: float, rng: np.random.Generator
) -> np.ndarray:
    """Independent N(0, sigma^2 I) draws, one row per input position."""
    return rng.standard_normal((n_positions, dim)) * math.sqrt(sigma_squared)


def noise_rng(perturbation: PerturbationConfig, text: str) -> np.random.Generator:
    # Keyed by input so a handle gives the same draw regardless of call order.
    return np.random.default_rng([perturbation.seed, int(stable_hash(text)[:16], 16)])


class Backend(Protocol):
    supports_embedding_noise: bool

    def generate(
        self, text: str, decode: DecodeConfig, perturbation: PerturbationConfig | None = None
    ) -> str: ...

    def candidate_log_likelihoods(
        self,
        context: str,
        candidates: Sequence[str],
        perturbation: PerturbationConfig | None = None,
    ) -> list[float]: ...


@dataclass(frozen=True)
class _StubPrompt:
    setting: Setting
    question: str
    choices: tuple[str, ...]
    given_label: str | None


def _parse_prompt(text: str) -> _StubPrompt:
    body = text.strip()
    given_label = None
    if body.endswith(" [rationale]") and " [answer] " in body:
        body = body.removesuffix(" [rationale]")
        body, _, given_label = body.rpartition(" [answer] ")
        setting = Setting.XY_R
    elif body.endswith(" [answer]"):
        body = body.removesuffix(" [answer]")
        setting = Setting.X_YR
    elif body.endswith(" [rationale]"):
        body = body.removesuffix(" [rationale]")
        setting = Setting.X_RY
    else:
        raise BackendUnavailable(f"[stub] prompt has no setting suffix: {text[-40:]!r}")
    if body.startswith("[premise] "):
        premise, _, hypothesis = body.removeprefix("[premise] ").partition(" [hypothesis] ")
        return _StubPrompt(setting, f"{premise} {hypothesis}", NLI_LABELS, given_label)
    parts = body.removeprefix("[question] ").split(" [choice] ")
    return _StubPrompt(setting, parts[0], tuple(parts[1:]), given_label)


def _topic(question: str) -> str:
    topic = question.strip().rstrip("?.")
    return topic[:1].lower() + topic[1:]


class StubBackend:
    """Deterministic template generator over the candidate set.

    The clean answer comes from `answer_key` (question or premise+hypothesis text to
    `{"label", "rationale"}`), else the first candidate. Each prompt's corruption is the mean
    squared embedding noise over its perturbed positions; with a fixed seed this is
    `sigma^2 * q` for a per-prompt constant `q`, so answers flip from right to wrong exactly
    once as sigma^2 grows. Past `garble_factor * noise_tolerance` the output loses its tag.
    """

    supports_embedding_noise = True

    def __init__(
        self,
        answer_key: Mapping[str, Mapping[str, str] | str] | None = None,
        dim: int = 16,
        noise_tolerance: float = 12.0,
        garble_factor: float = 2.0,
        eos: str = DEFAULT_EOS,
    ):
        if dim < 1 or noise_tolerance <= 0 or garble_factor < 1:
            raise InvalidConfig("[stub] dim >= 1, noise_tolerance > 0 and garble_factor >= 1")
        self.answer_key = {
            question: ({"label": entry} if isinstance(entry, str) else dict(entry))
            for question, entry in (answer_key or {}).items()
        }
        self.dim = dim
        self.noise_tolerance = noise_tolerance
        self.garble_factor = garble_factor
        self.eos = eos

    @classmethod
    def from_config(cls, data: Mapping[str, Any]) -> StubBackend:
        known = {"answer_key", "dim", "noise_tolerance", "garble_factor", "eos"}
        unknown = set(data) - known - {"kind"}
        if unknown:
            raise InvalidConfig(f"[stub] unknown stub backend keys: {sorted(unknown)}")
        return cls(**{k: v for k, v in data.items() if k in known})

    def corruption(self, text: str, perturbation: PerturbationConfig | None) -> float:
        if perturbation is None or perturbation.is_noop:
            return 0.0
        tokens = text.split()
        if not perturbation.perturb_special_tokens:
            tokens = [t for t in tokens if not _SPECIAL_TOKEN_RE.match(t) and t != self.eos]
        if not tokens:
            return 0.0
        noise = draw_embedding_noise(
            len(tokens), self.dim, perturbation.sigma_squared, noise_rng(perturbation, text)
        )
        return float(np.mean(noise**2))

    def _clean_answer(self, prompt: _StubPrompt) -> tuple[str, str | None]:
        entry = self.answer_key.get(prompt.question, {})
        label = prompt.given_label or entry.get("label") or prompt.choices[0]
        return label, entry.get("rationale")

    def generate(
        self, text: str, decode: DecodeConfig, perturbation: PerturbationConfig | None = None
    ) -> str:
        prompt = _parse_prompt(text)
        if not prompt.choices:
            raise BackendUnavailable("[stub] prompt has no candidates")
        label, rationale = self._clean_answer(prompt)
        topic = _topic(prompt.question)
        corruption = self.corruption(text, perturbation)
        if corruption >= self.noise_tolerance and prompt.given_label is None:
            idx = prompt.choices.index(label) if label in prompt.choices else -1
            other = prompt.choices[(idx + 1) % len(prompt.choices)]
            rationale = f"{other.capitalize()} is one answer to {topic}."
            label = other
        elif corruption >= self.noise_tolerance:
            # Label kept, rationale reduced to restating it.
            rationale = f"{label.capitalize()} goes with {topic}."
        if rationale is None:
            rationale = f"{label.capitalize()} is the answer to {topic}."
        words = rationale.split()[: decode.max_length]
        rationale = " ".join(words)
        if corruption >= self.garble_factor * self.noise_tolerance:
            return f"{rationale} {self.eos}"
        if prompt.setting is Setting.XY_R:
            return f"{rationale} {self.eos}"
        if prompt.setting is Setting.X_YR:
            return f"{label} [rationale] {rationale} {self.eos}"
        return f"{rationale} [answer] {label} {self.eos}"

    def candidate_log_likelihoods(
        self,
        context: str,
        candidates: Sequence[str],
        perturbation: PerturbationConfig | None = None,
    ) -> list[float]:
        # Only the generated rationale counts, not the prompt listing every choice.
        segment = context.rsplit("[rationale]", 1)[-1].removesuffix("[answer]")
        context_words = set(_WORD_RE.findall(segment.lower()))
        scores = []
        for candidate in candidates:
            words = _WORD_RE.findall(candidate.lower())
            overlap = sum(w in context_words for w in words) / max(len(words), 1)
            scores.append(math.log(overlap + 1e-3))
        return scores


class CommandBackend:
    """Remote task model over the JSON command protocol.

    Generate request `{"op": "generate", "text", "decode", "perturbation"}` answers
    `{"text"}`; likelihood request `{"op": "loglik", "context", "candidates",
    "perturbation"}` answers `{"log_likelihoods"}`.
    """

    def __init__(self, client: CommandClient, supports_embedding_noise: bool = False):
        self.client = client
        self.supports_embedding_noise = supports_embedding_noise

    def generate(
        self, text: str, decode: DecodeConfig, perturbation: PerturbationConfig | None = None
    ) -> str:
        response = self.client.request(
            {
                "op": "generate",
                "text": text,
                "decode": decode.to_dict(),
                "perturbation": perturbation.to_dict() if perturbation else None,
            }
        )
        generated = response.get("text")
        if not isinstance(generated, str):
            raise BackendUnavailable(f"[backend] response has no text: {response!r}")
        return generated

    def candidate_log_likelihoods(
        self,
        context: str,
        candidates: Sequence[str],
        perturbation: PerturbationConfig | None = None,
    ) -> list[float]:
        response = self.client.request(
            {
                "op": "loglik",
                "context": context,
                "candidates": list(candidates),
                "perturbation": perturbation.to_dict() if perturbation else None,
            }
        )
        scores = response.get("log_likelihoods")
        if not isinstance(scores, list) or len(scores) != len(candidates):
            raise BackendUnavailable(f"[backend] malformed likelihood response: {response!r}")
        return [float(s) for s in scores]


class PerturbedBackend:
    """Backend handle whose every inference call carries one seeded noise config."""

    def __init__(self, base: Backend, perturbation: PerturbationConfig):
        self.base = base
        self.perturbation = perturbation
        self.supports_embedding_noise = base.supports_embedding_noise

    def generate(
        self, text: str, decode: DecodeConfig, perturbation: PerturbationConfig | None = None
    ) -> str:
        return self.base.generate(text, decode, perturbation or self.perturbation)

    def candidate_log_likelihoods(
        self,
        context: str,
        candidates: Sequence[str],
        perturbation: PerturbationConfig | None = None,
    ) -> list[float]:
        return self.base.candidate_log_likelihoods(
            context, candidates, perturbation or self.perturbation
        )


def apply_embedding_noise(backend: Backend, cfg: PerturbationConfig) -> Backend:
    if not backend.supports_embedding_noise:
        raise HookUnsupported(
            f"[noise] {type(backend).__name__} does not expose an embedding-noise hook"
        )
    if cfg.is_noop:
        return backend
    return PerturbedBackend(backend, cfg)


def backend_from_config(data: Mapping[str, Any]) -> Backend:
    kind = data.get("kind", "stub")
    if kind == "stub":
        return StubBackend.from_config(data)
    if kind == "command":
        client = CommandClient.from_config(data["command"], data.get("timeout"))
        return CommandBackend(client, bool(data.get("supports_embedding_noise", False)))
    raise InvalidConfig(f"[backend] unknown backend kind {kind!r}")


@dataclass(frozen=True)
class TaskModelAdapter:
    setting: Setting
    backend: Backend
    decode_config: DecodeConfig = field(default_factory=DecodeConfig)
    eos: str = DEFAULT_EOS

    def __post_init__(self) -> None:
        setting = Setting.parse(self.setting)
        if not setting.is_task_model:
            raise InvalidConfig(f"[generate] {setting.value} is not a task-model setting")
        object.__setattr__(self, "setting", setting)


def _backend_for(adapter: TaskModelAdapter, perturbation: PerturbationConfig | None) -> Backend:
    if perturbation is None or perturbation.is_noop:
        return adapter.backend
    return apply_embedding_noise(adapter.backend, perturbation)


def _select(backend: Backend, context: str, candidates: Sequence[str]) -> str:
    if not candidates:
        raise InvalidConfig("[generate] label selection needs at least one candidate")
    scores = backend.candidate_log_likelihoods(context, candidates)
    # np.argmax returns the first maximum, i.e. the lowest candidate index on ties.
    return candidates[int(np.argmax(np.asarray(scores, dtype=float)))]


def select_label_by_likelihood(
    adapter: TaskModelAdapter,
    rationale: str,
    example: Example,
    perturbation: PerturbationConfig | None = None,
) -> str:
    if adapter.setting is not Setting.X_RY:
        raise InvalidConfig("[generate] likelihood label selection is defined for X->RY only")
    context = f"{serialize_input(example, Setting.X_RY)} {rationale} [answer]"
    return _select(_backend_for(adapter, perturbation), context, example.candidates)


def parse_generation(
    text: str, setting: Setting | str, eos: str = DEFAULT_EOS
) -> tuple[str, str]:
    """Split a raw generation into `(label, rationale)` with the setting's output grammar.

    XY*->R outputs carry no label, so the returned label is empty for that setting.
    """
    try:
        label, rationale = split_target(text, setting, eos)
    except InvalidConfig:
        raise
    except ValueError as exc:
        raise UnparseableGeneration(str(exc), text=text) from exc
    if not rationale:
        raise UnparseableGeneration("empty rationale", text=text)
    return label, rationale


def generate(
    adapter: TaskModelAdapter,
    example: Example,
    perturbation: PerturbationConfig | None = None,
) -> RationaleLabelPair:
    text = serialize_input(example, adapter.setting)
    backend = _backend_for(adapter, perturbation)
    output = backend.generate(text, adapter.decode_config)
    try:
        label, rationale = parse_generation(output, adapter.setting, adapter.eos)
    except UnparseableGeneration as exc:
        raise UnparseableGeneration(f"[generate] {example.id}: {exc}", text=output) from exc
    if adapter.setting is Setting.XY_R:
        label = example.gold_label
    elif adapter.setting is Setting.X_RY:
        context = f"{text} {rationale} [answer]"
        label = _select(backend, context, example.candidates)
    if label not in example.candidates:
        raise UnparseableGeneration(
            f"[generate] {example.id}: label {label!r} is not a candidate", text=output
        )
    return RationaleLabelPair(example.id, label, rationale, adapter.setting)


@dataclass(frozen=True)
class GenerationBatch:
    pairs: tuple[RationaleLabelPair, ...]
    excluded: tuple[str, ...]
    correct: dict[str, bool]

    @property
    def n_excluded(self) -> int:
        return len(self.excluded)

    @property
    def accuracy(self) -> float:
        """Fraction of all attempted examples answered with the gold label."""
        attempted = len(self.pairs) + len(self.excluded)
        if attempted == 0:
            return 0.0
        return sum(self.correct.values()) / attempted


def generate_pairs(
    adapter: TaskModelAdapter,
    examples: Iterable[Example],
    perturbation: PerturbationConfig | None = None,
) -> GenerationBatch:
    pairs: list[RationaleLabelPair] = []
    excluded: list[str] = []
    correct: dict[str, bool] = {}
    for example in examples:
        try:
            pair = generate(adapter, example, perturbation)
        except UnparseableGeneration as exc:
            logger.debug("excluding %s: %s", example.id, exc)
            excluded.append(example.id)
            continue
        pairs.append(pair)
        correct[example.id] = pair.label == example.gold_label
    if excluded:
        logger.warning(
            "%d of %d generations were unparseable and excluded",
            len(excluded), len(pairs) + len(excluded),
        )
    return GenerationBatch(tuple(pairs), tuple(excluded), correct)
